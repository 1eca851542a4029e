//! Spatial weights matrices.
//!
//! `W` is stored in compressed row form. Contiguity matrices are binary and
//! symmetric until [`WeightsMatrix::row_normalize`] is applied.

use std::sync::OnceLock;

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.7613;

/// Lattice adjacency rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contiguity {
    /// Shared edge (left/right/above/below).
    Rook,
    /// Shared edge or corner.
    Queen,
}

impl std::str::FromStr for Contiguity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rook" => Ok(Contiguity::Rook),
            "queen" => Ok(Contiguity::Queen),
            other => Err(Error::InvalidInput(format!(
                "unknown contiguity scheme `{other}` (expected rook or queen)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightsMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    row_normalized: bool,
    spectrum: OnceLock<Vec<Complex<f64>>>,
}

impl PartialEq for WeightsMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values == other.values
            && self.row_normalized == other.row_normalized
    }
}

impl WeightsMatrix {
    /// Builds a matrix from `(row, col, weight)` triplets.
    ///
    /// Explicit zeros are dropped and duplicates are rejected.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        row_normalized: bool,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("weights matrix needs n >= 1".into()));
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, w) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "weight index ({i}, {j}) out of range for n = {n}"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "weight ({i}, {j}) = {w} must be finite and nonnegative"
                )));
            }
            if i == j && w != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "diagonal weight ({i}, {i}) = {w} must be zero"
                )));
            }
            if w != 0.0 {
                entries.push((i, j, w));
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1)
        {
            return Err(Error::InvalidInput(format!(
                "duplicate weight entry ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &entries {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();

        let m = WeightsMatrix {
            n,
            row_ptr,
            col_idx,
            values,
            row_normalized,
            spectrum: OnceLock::new(),
        };
        if row_normalized {
            for i in 0..n {
                let s = m.row_sum(i);
                if s != 0.0 && (s - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "matrix flagged row-normalized but row {i} sums to {s}"
                    )));
                }
            }
        }
        Ok(m)
    }

    /// Binary contiguity on a `k x m` lattice.
    ///
    /// Cell `(r, c)` holds site `perm[r * m + c]`, where `perm` is the identity
    /// or, when `permutation_seed` is given, a seeded random permutation of
    /// `0..n`.
    pub fn lattice(
        k: usize,
        m: usize,
        scheme: Contiguity,
        permutation_seed: Option<u64>,
    ) -> Result<Self> {
        let n = k.checked_mul(m).unwrap_or(0);
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "lattice {k}x{m} must hold at least 2 cells"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        if let Some(seed) = permutation_seed {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            perm.shuffle(&mut rng);
        }

        let offsets: &[(isize, isize)] = match scheme {
            Contiguity::Rook => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Contiguity::Queen => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        };
        let mut triplets = Vec::with_capacity(n * offsets.len());
        for r in 0..k as isize {
            for c in 0..m as isize {
                let site = perm[(r as usize) * m + c as usize];
                for &(dr, dc) in offsets {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= k as isize || cc >= m as isize {
                        continue;
                    }
                    let other = perm[(rr as usize) * m + cc as usize];
                    triplets.push((site, other, 1.0));
                }
            }
        }
        let w = Self::from_triplets(n, triplets, false)?;
        w.warn_isolated();
        Ok(w)
    }

    /// Binary contiguity: `w_ij = 1` iff the haversine distance between
    /// `(lat, lon)` points `i` and `j` is at most `threshold_miles`.
    pub fn distance_contiguity(coords: &[(f64, f64)], threshold_miles: f64) -> Result<Self> {
        let n = coords.len();
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "distance contiguity needs at least 2 locations, got {n}"
            )));
        }
        if !(threshold_miles.is_finite() && threshold_miles > 0.0) {
            return Err(Error::InvalidInput(format!(
                "distance threshold must be positive, got {threshold_miles}"
            )));
        }
        for (i, &(lat, lon)) in coords.iter().enumerate() {
            if !lat.is_finite() || !lon.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "coordinate {i} = ({lat}, {lon}) is not finite"
                )));
            }
        }
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && haversine_miles(coords[i], coords[j]) <= threshold_miles {
                    triplets.push((i, j, 1.0));
                }
            }
        }
        let w = Self::from_triplets(n, triplets, false)?;
        w.warn_isolated();
        Ok(w)
    }

    fn warn_isolated(&self) {
        let isolated = self.isolated_sites();
        if !isolated.is_empty() {
            log::warn!(
                "{} of {} sites have no neighbors: {:?}",
                isolated.len(),
                self.n,
                isolated
            );
        }
    }

    /// Divides every nonzero row by its sum. Zero rows stay zero.
    pub fn row_normalize(&self) -> Self {
        let mut values = self.values.clone();
        for i in 0..self.n {
            let range = self.row_ptr[i]..self.row_ptr[i + 1];
            let s: f64 = values[range.clone()].iter().sum();
            if s > 0.0 {
                values[range].iter_mut().for_each(|v| *v /= s);
            }
        }
        WeightsMatrix {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
            row_normalized: true,
            spectrum: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_row_normalized(&self) -> bool {
        self.row_normalized
    }

    /// Nonzero `(col, weight)` pairs of row `i`, in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn neighbor_count(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn isolated_sites(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.neighbor_count(i) == 0).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, w)| self.get(j, i) == w)
    }

    pub fn mean_neighbors(&self) -> f64 {
        self.nnz() as f64 / self.n as f64
    }

    /// Percentage of zero entries in the full `n x n` matrix.
    pub fn sparsity_percent(&self) -> f64 {
        100.0 * (1.0 - self.nnz() as f64 / (self.n * self.n) as f64)
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, w)| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.triplets() {
            d[(i, j)] = w;
        }
        d
    }

    /// `W x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, w)| w * x[j]).sum())
            .collect()
    }

    /// `W x` for a column vector.
    pub fn mul_dvec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.mul_vec(x.as_slice()))
    }

    /// Eigenvalues of `W`, computed once through a real Schur decomposition
    /// and cached.
    pub fn spectrum(&self) -> Result<&[Complex<f64>]> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        let eig = eigenvalues(&self.to_dense()).ok_or_else(|| {
            Error::Numerical("Schur decomposition of W did not converge".into())
        })?;
        Ok(self.spectrum.get_or_init(|| eig))
    }

    /// Largest eigenvalue modulus of `W`.
    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(self.spectrum()?.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }
}

/// Eigenvalues of a square matrix via the real Schur form.
///
/// The unshifted QR iteration can stall on spectra symmetric about zero
/// (a path graph's `W` has eigenvalues `1, 0, -1`); a diagonal shift breaks
/// the tie and is subtracted afterwards.
pub(crate) fn eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let n = m.nrows();
    for shift in [0.0, 0.5, -0.37, 1.3] {
        let shifted = m + DMatrix::identity(n, n) * shift;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 100 * n.max(10)) {
            return Some(
                schur
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z - shift)
                    .collect(),
            );
        }
    }
    None
}

/// Great-circle distance in miles between two `(lat, lon)` points in degrees.
pub fn haversine_miles(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_spectrum() {
        // eigenvalues 1, 0, -1 stall the unshifted Schur iteration
        let w = WeightsMatrix::lattice(1, 3, Contiguity::Rook, None).unwrap().row_normalize();
        let mut re: Vec<f64> = w.spectrum().unwrap().iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        for (got, want) in re.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{re:?}");
        }
        assert!((w.spectral_radius().unwrap() - 1.0).abs() < 1e-12);
    }

    /// Latitude offset (degrees) of a point `miles` north along a meridian.
    fn north(miles: f64) -> f64 {
        (miles / EARTH_RADIUS_MILES).to_degrees()
    }

    #[test]
    fn rook_2x2_has_two_neighbors_each() {
        let w = WeightsMatrix::lattice(2, 2, Contiguity::Rook, None).unwrap();
        assert_eq!(w.n(), 4);
        for i in 0..4 {
            assert_eq!(w.neighbor_count(i), 2);
        }
        assert!(!w.is_row_normalized());
    }

    #[test]
    fn queen_3x3_center_and_corners() {
        let w = WeightsMatrix::lattice(3, 3, Contiguity::Queen, None).unwrap();
        assert_eq!(w.neighbor_count(4), 8);
        for corner in [0, 2, 6, 8] {
            assert_eq!(w.neighbor_count(corner), 3);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(w.neighbor_count(edge), 5);
        }
    }

    #[test]
    fn rook_7x14_interior_has_four_neighbors() {
        let w = WeightsMatrix::lattice(7, 14, Contiguity::Rook, None).unwrap();
        assert_eq!(w.n(), 98);
        for r in 1..6 {
            for c in 1..13 {
                assert_eq!(w.neighbor_count(r * 14 + c), 4);
            }
        }
        assert_eq!(w.neighbor_count(0), 2);
    }

    #[test]
    fn permuted_lattice_is_a_relabeling() {
        let a = WeightsMatrix::lattice(4, 5, Contiguity::Queen, None).unwrap();
        let b = WeightsMatrix::lattice(4, 5, Contiguity::Queen, Some(7)).unwrap();
        assert_eq!(a.nnz(), b.nnz());
        let mut da: Vec<_> = (0..20).map(|i| a.neighbor_count(i)).collect();
        let mut db: Vec<_> = (0..20).map(|i| b.neighbor_count(i)).collect();
        assert_ne!(da, db);
        da.sort();
        db.sort();
        assert_eq!(da, db);
        assert!(b.is_symmetric());
        assert_eq!(b, WeightsMatrix::lattice(4, 5, Contiguity::Queen, Some(7)).unwrap());
    }

    #[test]
    fn lattice_rejects_single_cell() {
        assert!(matches!(
            WeightsMatrix::lattice(1, 1, Contiguity::Rook, None),
            Err(Error::InvalidDimension(_))
        ));
        assert!(WeightsMatrix::lattice(0, 5, Contiguity::Rook, None).is_err());
    }

    #[test]
    fn distance_pairs() {
        let near = [(45.0, 9.0), (45.0 + north(10.0), 9.0)];
        let w = WeightsMatrix::distance_contiguity(&near, 15.0).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);

        let far = [(45.0, 9.0), (45.0 + north(20.0), 9.0)];
        let w = WeightsMatrix::distance_contiguity(&far, 15.0).unwrap();
        assert_eq!(w.nnz(), 0);
    }

    #[test]
    fn distance_collinear_three_stations() {
        let coords = [
            (45.0, 9.0),
            (45.0 + north(10.0), 9.0),
            (45.0 + north(25.0), 9.0),
        ];
        // Meridian arcs: d12 = 10, d23 = 15, d13 = 25 miles.
        assert!((haversine_miles(coords[0], coords[1]) - 10.0).abs() < 1e-9);
        assert!((haversine_miles(coords[1], coords[2]) - 15.0).abs() < 1e-9);
        let w = WeightsMatrix::distance_contiguity(&coords, 15.0 + 1e-9).unwrap();
        assert_eq!(w.neighbor_count(1), 2);
        assert_eq!(w.get(0, 2), 0.0);
        assert_eq!(w.get(2, 0), 0.0);
    }

    #[test]
    fn distance_rejects_non_finite_and_allows_duplicates() {
        let bad = [(45.0, 9.0), (f64::NAN, 9.0)];
        assert!(matches!(
            WeightsMatrix::distance_contiguity(&bad, 15.0),
            Err(Error::InvalidInput(_))
        ));
        let dup = [(45.0, 9.0), (45.0, 9.0)];
        let w = WeightsMatrix::distance_contiguity(&dup, 15.0).unwrap();
        assert_eq!(w.nnz(), 2);
    }

    #[test]
    fn row_normalize_examples() {
        let w = WeightsMatrix::lattice(2, 2, Contiguity::Rook, None)
            .unwrap()
            .row_normalize();
        assert!(w.triplets().all(|(_, _, v)| v == 0.5));

        let q = WeightsMatrix::lattice(3, 3, Contiguity::Queen, None)
            .unwrap()
            .row_normalize();
        let center: Vec<f64> = q.row(4).map(|(_, v)| v).collect();
        assert_eq!(center, vec![0.125; 8]);

        let iso = WeightsMatrix::from_triplets(3, [(0, 1, 1.0), (1, 0, 2.0)], false)
            .unwrap()
            .row_normalize();
        assert!(iso.is_row_normalized());
        assert_eq!(iso.row_sum(2), 0.0);
        assert_eq!(iso.isolated_sites(), vec![2]);
        assert_eq!(iso.get(1, 0), 1.0);
    }

    #[test]
    fn rejects_invalid_entries() {
        assert!(WeightsMatrix::from_triplets(2, [(0, 0, 1.0)], false).is_err());
        assert!(WeightsMatrix::from_triplets(2, [(0, 1, -1.0)], false).is_err());
        assert!(WeightsMatrix::from_triplets(2, [(0, 2, 1.0)], false).is_err());
        assert!(WeightsMatrix::from_triplets(2, [(0, 1, 1.0), (0, 1, 1.0)], false).is_err());
        assert!(WeightsMatrix::from_triplets(2, [(0, 1, 0.5)], true).is_err());
    }

    #[test]
    fn row_normalized_lattice_has_unit_radius() {
        let w = WeightsMatrix::lattice(3, 4, Contiguity::Rook, None)
            .unwrap()
            .row_normalize();
        assert!((w.inf_norm() - 1.0).abs() < 1e-15);
        assert!((w.spectral_radius().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sparsity_statistics() {
        let w = WeightsMatrix::lattice(2, 2, Contiguity::Rook, None).unwrap();
        assert_eq!(w.mean_neighbors(), 2.0);
        assert_eq!(w.sparsity_percent(), 50.0);
    }
}
