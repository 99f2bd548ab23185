//! `blearner` — CATE bound estimation under bounded hidden confounding.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blearner_cli::config::{Overrides, RunConfig};
use blearner_cli::data::write_bounds_csv;
use blearner_cli::plots::{emit_plots, PlotKind};
use blearner_cli::table::{write_atomic, ResultsTable};
use blearner_cli::{config_hash, experiments, CliError};

#[derive(Parser)]
#[command(
    name = "blearner",
    about = "Sharp CATE bounds under the marginal sensitivity model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// TOML configuration file
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Base random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR", global = true)]
    out: Option<String>,
    /// Sensitivity level Λ (scalar, or comma grid for sweep)
    #[arg(long, conflicts_with = "log_lambda", global = true)]
    lambda: Option<String>,
    /// log Λ (scalar, or comma grid for sweep)
    #[arg(long, global = true)]
    log_lambda: Option<String>,
    /// Cross-fitting folds K
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Nuisance family: kernel | forest | logistic-e
    #[arg(long, global = true)]
    nuisance: Option<String>,
    /// Second stage: kernel | forest | smoother
    #[arg(long, global = true)]
    second_stage: Option<String>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic convergence study across sample sizes
    Simulate(CommonFlags),
    /// Deferral-policy experiment on confounded data
    Defer(CommonFlags),
    /// Λ-grid sweep with per-row bounds
    Sweep(CommonFlags),
    /// Fit once and write per-row bounds for user data
    Estimate(CommonFlags),
    /// Render plot CSV/SVG from a results table
    Plot {
        #[command(flatten)]
        flags: CommonFlags,
        /// convergence | defer | sweep
        #[arg(long)]
        kind: String,
        /// Path to a results.csv produced by a run
        #[arg(long, value_name = "PATH")]
        results: PathBuf,
    },
}

fn resolve_config(flags: &CommonFlags) -> Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ov = Overrides {
        seed: flags.seed,
        out: flags.out.clone(),
        lambda: flags.lambda.clone(),
        log_lambda: flags.log_lambda.clone(),
        folds: flags.folds,
        nuisance: flags.nuisance.clone(),
        second_stage: flags.second_stage.clone(),
        threads: flags.threads,
    };
    ov.apply(&mut cfg)?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory (set --out or `out` in the config)".into()))?;
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<u64, CliError> {
    let text = cfg.to_toml();
    write_atomic(&dir.join("config.toml"), text.as_bytes())?;
    Ok(config_hash(&text))
}

fn finish(table: &ResultsTable, dir: &Path) -> Result<(), CliError> {
    table.write_atomic(&dir.join("results.csv"))?;
    println!("wrote {}", dir.join("results.csv").display());
    Ok(())
}

fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(flags) => {
            let cfg = resolve_config(flags)?;
            let dir = out_dir(&cfg)?;
            echo_config(&cfg, &dir)?;
            let table = experiments::run_simulate(&cfg)?;
            finish(&table, &dir)
        }
        Command::Defer(flags) => {
            let cfg = resolve_config(flags)?;
            let dir = out_dir(&cfg)?;
            echo_config(&cfg, &dir)?;
            let table = experiments::run_defer(&cfg)?;
            finish(&table, &dir)
        }
        Command::Sweep(flags) => {
            let cfg = resolve_config(flags)?;
            let dir = out_dir(&cfg)?;
            let hash = echo_config(&cfg, &dir)?;
            let (table, bounds) = experiments::run_sweep(&cfg)?;
            if cfg.sweep.write_bounds {
                for (ll, rows) in &bounds {
                    let name = format!("bounds_loglambda_{ll:.2}.csv");
                    write_bounds_csv(&dir.join(name), rows, ll.exp(), hash)?;
                }
            }
            finish(&table, &dir)
        }
        Command::Estimate(flags) => {
            let cfg = resolve_config(flags)?;
            let dir = out_dir(&cfg)?;
            let hash = echo_config(&cfg, &dir)?;
            let (bounds, lambda) = experiments::run_estimate(&cfg)?;
            write_bounds_csv(&dir.join("bounds.csv"), &bounds, lambda, hash)?;
            println!("wrote {}", dir.join("bounds.csv").display());
            Ok(())
        }
        Command::Plot { flags, kind, results } => {
            let cfg = resolve_config(flags)?;
            let dir = out_dir(&cfg)?;
            let text = std::fs::read_to_string(results)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", results.display())))?;
            let table = ResultsTable::parse_csv(&text)?;
            let kind: PlotKind = kind.parse()?;
            emit_plots(&table, kind, &dir)?;
            println!("wrote plots to {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
