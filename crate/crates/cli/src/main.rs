//! Command-line frontend: screen, calibrate, estimate, simulate, benchmark,
//! and lda pipelines over CSV inputs.
//!
//! Configuration comes from an optional TOML file plus flags; flags win.
//! Every command is deterministic under a fixed seed: the primary artifacts
//! (posterior mean, screen sets, metrics tables, scores) are byte-identical
//! across reruns. Timing columns live in separate `*_results.csv` /
//! diagnostics files, which naturally vary run to run.
//!
//! Exit codes: 0 success, 1 user error, 2 numerical failure. Failures also
//! emit a JSON error record on stderr.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use commands::CliError;
use config::{FnrSection, RunConfig, ScreeningConfig};

#[derive(Parser)]
#[command(
    name = "sbmcov",
    about = "Sparse covariance estimation by correlation screening and a screened beta-mixture shrinkage prior"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve a screening threshold on data and emit the retained pair list.
    Screen(CommonArgs),
    /// Calibrate the FNR-controlled screening threshold.
    Calibrate(CommonArgs),
    /// Screen, run the block Gibbs chain, and write the posterior mean.
    Estimate(CommonArgs),
    /// Replication study on synthetic truths.
    Simulate(CommonArgs),
    /// Timing comparison of the screened chain against the r = 0 baseline.
    Benchmark(CommonArgs),
    /// Linear discriminant classification with leave-one-out cross-validation.
    Lda(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Screen(a)
            | Command::Calibrate(a)
            | Command::Estimate(a)
            | Command::Simulate(a)
            | Command::Benchmark(a)
            | Command::Lda(a) => a,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Input data CSV (rows = observations, columns = variables).
    #[arg(long)]
    data: Option<PathBuf>,

    /// Labels file for lda (one label per row of the data file).
    #[arg(long)]
    labels: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Fixed screening threshold on |correlation|.
    #[arg(long, conflicts_with_all = ["quantile", "fnr"])]
    r: Option<f64>,

    /// Screening threshold as a quantile of |correlation| values.
    #[arg(long, conflicts_with = "fnr")]
    quantile: Option<f64>,

    /// FNR calibration as "rho_star,alpha_fnr,reps,kappa".
    #[arg(long, value_name = "RHO,ALPHA,B,KAPPA")]
    fnr: Option<String>,

    /// Total Gibbs sweeps.
    #[arg(long)]
    iters: Option<usize>,

    /// Burn-in sweeps discarded before summarizing.
    #[arg(long)]
    burnin: Option<usize>,

    /// Root seed; all randomness derives from it through named streams.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for replications and cross-validation folds.
    #[arg(long)]
    threads: Option<usize>,

    /// Subtract column means before correlations (default: on).
    #[arg(long)]
    center: Option<bool>,

    /// Sample size for calibrate when no data file is given.
    #[arg(long)]
    n: Option<usize>,

    /// Truth design for simulate/benchmark:
    /// random | random_speed_study | hubs | cliques.
    #[arg(long)]
    design: Option<String>,

    /// Dimension p for simulate/benchmark.
    #[arg(long)]
    p: Option<usize>,

    /// Replication count for simulate/benchmark.
    #[arg(long)]
    reps: Option<usize>,

    /// Estimator for simulate/lda: sbm | sample.
    #[arg(long)]
    estimator: Option<String>,

    /// Label column (name or 0-based index) inside the data file for lda.
    #[arg(long)]
    label_col: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            let record = serde_json::json!({
                "error": e.message(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let args = cli.command.args();
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(CliError::User)?,
        None => RunConfig::default(),
    };
    apply_flags(&mut cfg, args)?;

    if let Some(threads) = cfg.threads {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match &cli.command {
        Command::Screen(_) => commands::cmd_screen(&cfg),
        Command::Calibrate(_) => commands::cmd_calibrate(&cfg),
        Command::Estimate(_) => commands::cmd_estimate(&cfg),
        Command::Simulate(_) => commands::cmd_simulate(&cfg),
        Command::Benchmark(_) => commands::cmd_benchmark(&cfg),
        Command::Lda(_) => commands::cmd_lda(&cfg),
    }
}

fn apply_flags(cfg: &mut RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    if let Some(v) = &args.data {
        cfg.data = Some(v.clone());
    }
    if let Some(v) = &args.labels {
        cfg.labels = Some(v.clone());
    }
    if let Some(v) = &args.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = args.center {
        cfg.center = Some(v);
    }
    if let Some(v) = args.n {
        cfg.n = Some(v);
    }
    if args.r.is_some() || args.quantile.is_some() || args.fnr.is_some() {
        // A recipe flag replaces the configured screening section outright.
        cfg.screening = ScreeningConfig {
            r: args.r,
            quantile: args.quantile,
            fnr: match &args.fnr {
                Some(text) => Some(parse_fnr(text)?),
                None => None,
            },
        };
    }
    if let Some(v) = args.iters {
        cfg.chain.iters = v;
    }
    if let Some(v) = args.burnin {
        cfg.chain.burnin = v;
    }
    if args.design.is_some() || args.p.is_some() || args.reps.is_some() {
        let mut section = cfg.experiment.clone().unwrap_or_default();
        if let Some(name) = &args.design {
            section.design = parse_design(name)?;
        }
        if let Some(p) = args.p {
            section.p = p;
        }
        if let Some(n) = args.n {
            section.n = n;
        }
        if let Some(reps) = args.reps {
            section.replications = reps;
        }
        if let Some(est) = &args.estimator {
            section.estimator = est.clone();
        }
        cfg.experiment = Some(section);
    }
    if args.label_col.is_some() || args.estimator.is_some() {
        let mut section = cfg.lda.clone().unwrap_or_default();
        if let Some(col) = &args.label_col {
            section.label_col = Some(col.clone());
        }
        if let Some(est) = &args.estimator {
            section.estimator = est.clone();
        }
        cfg.lda = Some(section);
    }
    Ok(())
}

fn parse_fnr(text: &str) -> Result<FnrSection, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(CliError::User(format!(
            "--fnr expects rho_star,alpha_fnr,reps,kappa; got '{text}'"
        )));
    }
    let parse = |s: &str, name: &str| -> Result<f64, CliError> {
        s.parse::<f64>()
            .map_err(|e| CliError::User(format!("--fnr {name}: {e}")))
    };
    Ok(FnrSection {
        rho_star: parse(parts[0], "rho_star")?,
        alpha_fnr: parse(parts[1], "alpha_fnr")?,
        reps: parts[2]
            .parse::<usize>()
            .map_err(|e| CliError::User(format!("--fnr reps: {e}")))?,
        kappa: parse(parts[3], "kappa")?,
    })
}

fn parse_design(name: &str) -> Result<config::DesignName, CliError> {
    match name {
        "random" => Ok(config::DesignName::Random),
        "random_speed_study" => Ok(config::DesignName::RandomSpeedStudy),
        "hubs" => Ok(config::DesignName::Hubs),
        "cliques" => Ok(config::DesignName::Cliques),
        other => Err(CliError::User(format!(
            "unknown design '{other}': expected random, random_speed_study, hubs, or cliques"
        ))),
    }
}
