use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stsv::io::config::{RunConfig, WeightsScheme, WeightsSection, REFERENCE_CONFIG};
use stsv::io::{self, SummaryReport};
use stsv::Error;

#[derive(Parser)]
#[command(name = "stsv", version, about = "Spatiotemporal stochastic volatility: simulate, estimate, summarize")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the simulation and chain seeds.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Number of independent chains for `estimate`.
    #[arg(long, global = true, value_name = "N")]
    chains: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Proceed despite mismatched config or weights hashes.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel (plus true h and weights) from [simulate].
    Simulate,
    /// Run the Gibbs sampler on data.panel with data.weights.
    Estimate,
    /// Evaluate the closed-form moments listed under [moments].
    Moments,
    /// Build a weights matrix from [weights] or the flags below.
    Weights(WeightsArgs),
    /// Recompute the summary of an estimate output directory.
    Summarize,
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print every option with its default.
    Reference,
}

#[derive(Args)]
struct WeightsArgs {
    /// rook, queen or distance.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    permutation_seed: Option<u64>,
    /// site_id,lat,lon file for the distance scheme.
    #[arg(long, value_name = "PATH")]
    coords: Option<PathBuf>,
    #[arg(long, value_name = "MILES")]
    threshold: Option<f64>,
    /// Keep binary weights.
    #[arg(long)]
    no_normalize: bool,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => {
            let mut c = RunConfig::default();
            c.set_base_dir(std::env::current_dir().map_err(|e| Error::io(".", e))?);
            c
        }
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(chains) = cli.chains {
        cfg.chains = chains;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_config(cli: &Cli, command: &str) -> Result<(), Error> {
    if cli.config.is_none() {
        return Err(Error::Config(format!("`{command}` needs --config PATH")));
    }
    Ok(())
}

fn weights_section(args: &WeightsArgs) -> Result<Option<WeightsSection>, Error> {
    let Some(scheme) = &args.scheme else {
        return Ok(None);
    };
    let scheme = match scheme.to_ascii_lowercase().as_str() {
        "rook" => WeightsScheme::Rook,
        "queen" => WeightsScheme::Queen,
        "distance" => WeightsScheme::Distance,
        other => return Err(Error::Config(format!("unknown weights scheme `{other}`"))),
    };
    Ok(Some(WeightsSection {
        scheme,
        rows: args.rows,
        cols: args.cols,
        permutation_seed: args.permutation_seed,
        coordinates: args.coords.clone(),
        threshold_miles: args.threshold,
        row_normalize: !args.no_normalize,
    }))
}

fn print_report(r: &SummaryReport) {
    println!("{:<12} {:>12} {:>12} {:>12}", "parameter", "median", "2.5%", "97.5%");
    for p in &r.parameters {
        println!("{:<12} {:>12.4} {:>12.4} {:>12.4}", p.parameter, p.median, p.q025, p.q975);
    }
    println!(
        "chains {}  kept draws {}  rho acceptance {:.3} (burn-in {:.3})",
        r.chains, r.kept_draws, r.acceptance_rate, r.burn_in_acceptance_rate
    );
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Config {
            action: ConfigAction::Reference,
        } => {
            print!("{REFERENCE_CONFIG}");
        }
        Command::Weights(args) => {
            let mut cfg = load_config(cli)?;
            if let Some(section) = weights_section(args)? {
                cfg.weights = Some(section);
            }
            let out = cfg.out_dir(cli.out.as_deref());
            let meta = io::cmd_weights(&cfg, &out)?;
            println!("{}: {} sites ({})", out.join("weights.csv").display(), meta.n, meta.construction);
            println!(
                "each site has {:.4} neighbors on average; {:.4}% of the matrix is nonzero",
                meta.mean_neighbors,
                meta.sparsity_percent
            );
            if !meta.isolated_sites.is_empty() {
                println!("isolated sites: {}", meta.isolated_sites.join(", "));
            }
        }
        Command::Simulate => {
            require_config(cli, "simulate")?;
            let cfg = load_config(cli)?;
            let out = cfg.out_dir(cli.out.as_deref());
            let o = io::cmd_simulate(&cfg, &out)?;
            println!(
                "simulated {} sites x {} periods (seed {}) into {}",
                o.manifest.n,
                o.manifest.t_len,
                o.manifest.seed,
                out.display()
            );
        }
        Command::Estimate => {
            require_config(cli, "estimate")?;
            let cfg = load_config(cli)?;
            let out = cfg.out_dir(cli.out.as_deref());
            let o = io::cmd_estimate(&cfg, &out, cli.force)?;
            print_report(&o.report);
        }
        Command::Summarize => {
            let cfg = load_config(cli)?;
            let out = cfg.out_dir(cli.out.as_deref());
            let r = io::cmd_summarize(&out, cli.force)?;
            print_report(&r);
        }
        Command::Moments => {
            require_config(cli, "moments")?;
            let cfg = load_config(cli)?;
            let out = cli.out.as_deref().map(Path::to_path_buf).or_else(|| {
                cfg.data.out_dir.as_ref().map(|p| cfg.resolve(p))
            });
            let o = io::cmd_moments(&cfg, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&o)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
