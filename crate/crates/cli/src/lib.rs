//! Command-line driver: each subcommand runs one experiment, writes a
//! self-describing run directory, and can be replayed bit for bit.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use error::CliError;
use experiments::{run_subcommand, Context, Outcome};

/// Exit status for a violated contract check or a replay mismatch.
pub const EXIT_CONTRACT: i32 = 2;
/// Exit status for configuration and I/O failures.
pub const EXIT_ERROR: i32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "asiplab",
    version,
    about = "Numerical probes for random expanding circle maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment (or `all`) and write a run directory.
    Run(RunArgs),
    /// Re-run a stored report and compare it field by field.
    Replay {
        report: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Print the resolved configuration as TOML.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// thermo, gap, bounds, encoding, condition-h, assumption6, decay-base,
    /// sigma2, clt, lil, coboundary, or all.
    subcommand: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; defaults to `$ASIP_LAB_OUT`, then `./asiplab-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Dotted-path override, e.g. `statistics.trials=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs a subcommand in memory.
pub fn execute(sub: &str, cfg: &ExperimentConfig, threads: usize) -> Result<Outcome, CliError> {
    let cfg = cfg.clone();
    with_threads(threads, move || {
        let ctx = Context::new(cfg)?;
        run_subcommand(&ctx, sub)
    })?
}

fn run(args: RunArgs) -> Result<i32, CliError> {
    let mut overrides = args.overrides;
    if let Some(seed) = args.seed {
        overrides.push(format!("statistics.seed={seed}"));
    }
    let cfg = ExperimentConfig::load(args.config.as_deref(), &overrides)?;
    let outcome = execute(&args.subcommand, &cfg, args.threads)?;
    let root = args
        .out
        .or_else(|| std::env::var_os("ASIP_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("asiplab-out"));
    let dir = report::write_run(&root, &args.subcommand, &cfg, &outcome)?;
    println!("{}", dir.join("report.json").display());
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let failed: Vec<&String> = outcome
        .checks
        .iter()
        .filter(|(_, &ok)| !ok)
        .map(|(k, _)| k)
        .collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        for k in failed {
            eprintln!("contract check failed: {k}");
        }
        Ok(EXIT_CONTRACT)
    }
}

fn replay(path: PathBuf, threads: usize) -> Result<i32, CliError> {
    let stored = report::load_run(&path)?;
    let outcome = execute(&stored.subcommand, &stored.config, threads)?;
    let fresh = report::build_report(&stored.subcommand, &stored.config, &outcome);
    if let Some(p) = report::first_difference(&stored.report, &fresh) {
        eprintln!("replay mismatch at `{p}`");
        return Ok(EXIT_CONTRACT);
    }
    if let Some(f) = report::first_csv_difference(&stored.dir, &outcome)? {
        eprintln!("replay mismatch in file `{f}`");
        return Ok(EXIT_CONTRACT);
    }
    println!("replay matches {}", path.display());
    Ok(0)
}

/// Parses arguments and runs; returns the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Replay { report, threads } => replay(report, threads),
        Command::Config { config, overrides } => {
            ExperimentConfig::load(config.as_deref(), &overrides).and_then(|c| {
                print!(
                    "{}",
                    toml::to_string(&c).map_err(|e| CliError::Report(e.to_string()))?
                );
                Ok(0)
            })
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}
