//! Ten-component Gaussian mixture approximation to the log-chi-square(1)
//! density of `log v^2` for standard normal `v`.

use std::f64::consts::PI;

/// One Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub prob: f64,
    pub mean: f64,
    pub var: f64,
}

const fn comp(prob: f64, mean: f64, var: f64) -> MixtureComponent {
    MixtureComponent { prob, mean, var }
}

pub const NUM_COMPONENTS: usize = 10;

/// Component probabilities, means and variances (moment-matched table).
pub const MIXTURE_TABLE: [MixtureComponent; NUM_COMPONENTS] = [
    comp(0.00609, 1.92677, 0.11265),
    comp(0.04775, 1.34744, 0.17788),
    comp(0.13057, 0.73504, 0.26768),
    comp(0.20674, 0.02266, 0.40611),
    comp(0.22715, -0.85173, 0.62699),
    comp(0.18842, -1.97278, 0.98583),
    comp(0.12047, -3.46788, 1.57469),
    comp(0.05591, -5.55246, 2.54498),
    comp(0.01575, -8.68384, 4.16591),
    comp(0.00115, -14.65000, 7.33342),
];

/// The fixed mixture table.
pub fn mixture_table() -> &'static [MixtureComponent; NUM_COMPONENTS] {
    &MIXTURE_TABLE
}

/// `log p_j - log sqrt(2 pi s2_j)` for each component, precomputed.
pub(crate) fn log_norm_consts() -> [f64; NUM_COMPONENTS] {
    let mut out = [0.0; NUM_COMPONENTS];
    for (o, c) in out.iter_mut().zip(MIXTURE_TABLE.iter()) {
        *o = c.prob.ln() - 0.5 * (2.0 * PI * c.var).ln();
    }
    out
}

pub fn mixture_mean() -> f64 {
    MIXTURE_TABLE.iter().map(|c| c.prob * c.mean).sum()
}

pub fn mixture_variance() -> f64 {
    let m = mixture_mean();
    MIXTURE_TABLE
        .iter()
        .map(|c| c.prob * (c.var + c.mean * c.mean))
        .sum::<f64>()
        - m * m
}

/// Log density of `log v^2`, `v ~ N(0, 1)`.
pub fn logchi2_log_density(v: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - 0.5 * (v.exp() - v)
}

pub fn logchi2_density(v: f64) -> f64 {
    logchi2_log_density(v).exp()
}

/// Log of the mixture density, evaluated with log-sum-exp.
pub fn mixture_log_density(v: f64) -> f64 {
    let consts = log_norm_consts();
    let terms: [f64; NUM_COMPONENTS] = std::array::from_fn(|j| {
        let c = &MIXTURE_TABLE[j];
        consts[j] - 0.5 * (v - c.mean).powi(2) / c.var
    });
    log_sum_exp(&terms)
}

pub fn mixture_density(v: f64) -> f64 {
    mixture_log_density(v).exp()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson's rule.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
        let n = intervals + intervals % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            let x = a + k as f64 * h;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn table_invariants() {
        let t = mixture_table();
        let total: f64 = t.iter().map(|c| c.prob).sum();
        assert!((total - 1.0).abs() < 1e-9, "sum = {total}");
        assert!(t.iter().all(|c| c.var > 0.0));
        assert_eq!(t[0], comp(0.00609, 1.92677, 0.11265));
        assert_eq!(t[4], comp(0.22715, -0.85173, 0.62699));
        assert_eq!(t[9], comp(0.00115, -14.65, 7.33342));
    }

    #[test]
    fn moments_match_log_chi_square() {
        assert!((mixture_mean() + 1.2704).abs() < 0.01, "{}", mixture_mean());
        let target = PI * PI / 2.0;
        assert!((mixture_variance() - target).abs() < 0.05);
        // within 1% as well
        assert!((mixture_mean() + 1.2704).abs() / 1.2704 < 0.01);
        assert!((mixture_variance() - target).abs() / target < 0.01);
    }

    #[test]
    fn logchi2_density_values() {
        let expected = (2.0 * PI).powf(-0.5) * (-0.5f64).exp();
        assert!((logchi2_density(0.0) - expected).abs() < 1e-15);
        assert!((logchi2_density(0.0) - 0.241971).abs() < 1e-6);
        let tail = logchi2_density(-50.0);
        assert!(tail.is_finite() && tail >= 0.0 && tail < 1e-10);
        // left tail decays like exp(v / 2)
        assert!(logchi2_density(-800.0) > 0.0);
        assert_eq!(logchi2_density(-2000.0), 0.0);
        assert!(logchi2_log_density(-2000.0).is_finite());
    }

    #[test]
    fn logchi2_density_integrates_to_one() {
        let total = simpson(logchi2_density, -30.0, 10.0, 200_000);
        assert!((total - 1.0).abs() < 1e-6, "integral = {total}");
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let total = simpson(mixture_density, -80.0, 20.0, 400_000);
        let mass: f64 = MIXTURE_TABLE.iter().map(|c| c.prob).sum();
        assert!((total - mass).abs() < 1e-8, "integral = {total}");
    }

    #[test]
    fn mixture_tracks_exact_density() {
        let mut gap: f64 = 0.0;
        for k in 0..=2500 {
            let v = -20.0 + 0.01 * k as f64;
            gap = gap.max((mixture_density(v) - logchi2_density(v)).abs());
        }
        assert!(gap < 0.01, "sup-norm gap {gap}");
        let at0 = mixture_density(0.0);
        assert!(at0.is_finite() && at0 > 0.0);
    }

    #[test]
    fn log_density_far_tail_is_finite() {
        assert!(mixture_log_density(-500.0).is_finite());
        assert!(mixture_log_density(60.0).is_finite());
    }
}
