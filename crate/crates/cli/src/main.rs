//! `supmin` — command-line harness for the simulation laboratory.
//!
//! Every run command reads a config file, derives all randomness from one
//! master seed, writes results plus plot data into an output directory, and
//! records a manifest with content digests. Result files are bit-identical
//! across repeated runs and worker counts.

mod config;
mod manifest;
mod plot;
mod run;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use manifest::{digest_outputs, write_error_record, ErrorRecord, RunManifest, SeedSource};
use run::{Artifacts, RunContext};
use supmin::stats::StreamFamily;

/// Used when no seed is given anywhere; an arbitrary fixed constant so the
/// default run is still reproducible.
const DEFAULT_SEED: u64 = 0x5ca1_ab1e_0000_0001;

/// CLI-level error taxonomy, mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration (exit 1).
    Config(String),
    /// The library refused to produce an uncertified or degenerate number
    /// (exit 2). The message carries the library's advice.
    Refusal(String),
    /// I/O or serialization failure (exit 3).
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Refusal(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Refusal(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<supmin::Error> for CliError {
    fn from(e: supmin::Error) -> Self {
        use supmin::Error as E;
        match &e {
            E::Domain(_) | E::Config(_) | E::ShapeMismatch(_) => CliError::Config(e.to_string()),
            E::InsufficientData(_)
            | E::TruncationUncertified { .. }
            | E::RejectionInfeasible { .. }
            | E::ModelInconsistency { .. }
            | E::DegenerateStatistic(_)
            | E::NotPositiveDefinite(_) => CliError::Refusal(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Both,
}

#[derive(Parser)]
#[command(
    name = "supmin",
    version,
    about = "Monte Carlo laboratory for extremes of conjunctions of stationary Gaussian processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the generalized Pickands-type constant over a gap ladder.
    Pickands(RunArgs),
    /// Simulate supremum tails and compare against the asymptotic formula.
    Tail(RunArgs),
    /// Crossing probabilities of the ensemble's order statistics.
    OrderStats(RunArgs),
    /// Sojourn-time statistics and the limiting occupation law.
    Sojourn(RunArgs),
    /// Shape of high excursions against the simulated limit field.
    LimitLaw(RunArgs),
    /// Distributional self-checks of the path samplers.
    ValidateSampler(RunArgs),
    /// Rebuild plot-data files from an existing results directory.
    EmitPlotData(PlotArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pickands(_) => "pickands",
            Command::Tail(_) => "tail",
            Command::OrderStats(_) => "order-stats",
            Command::Sojourn(_) => "sojourn",
            Command::LimitLaw(_) => "limit-law",
            Command::ValidateSampler(_) => "validate-sampler",
            Command::EmitPlotData(_) => "emit-plot-data",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (TOML; `.json` files are read as JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `SUPMIN_SEED` and the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for results, plot data, and the manifest.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads (default: all cores). Never affects the numbers.
    #[arg(long)]
    jobs: Option<usize>,
    /// Which result files to write; plot data is always written.
    #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
    format: OutputFormat,
}

#[derive(Args)]
struct PlotArgs {
    /// Results directory holding the JSON outputs of a previous run.
    #[arg(long, default_value = "results")]
    results: PathBuf,
    /// Where to write the `.dat` files (default: the results directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve_seed(cli_seed: Option<u64>, config_seed: Option<u64>) -> Result<(u64, SeedSource), CliError> {
    if let Some(s) = cli_seed {
        return Ok((s, SeedSource::CliFlag));
    }
    if let Ok(v) = std::env::var("SUPMIN_SEED") {
        let s = v.trim().parse::<u64>().map_err(|e| {
            CliError::Config(format!("SUPMIN_SEED must be an unsigned integer, got {v:?}: {e}"))
        })?;
        return Ok((s, SeedSource::Environment));
    }
    if let Some(s) = config_seed {
        return Ok((s, SeedSource::ConfigFile));
    }
    Ok((DEFAULT_SEED, SeedSource::Default))
}

fn dispatch(name: &str, cfg: &RunConfig, ctx: &RunContext) -> Result<Artifacts, CliError> {
    let missing = |section: &str| {
        CliError::Config(format!(
            "config file has no [{section}] section required by `supmin {name}`"
        ))
    };
    match name {
        "pickands" => {
            let job = cfg.pickands.as_ref().ok_or_else(|| missing("pickands"))?;
            run::run_pickands(cfg, job, ctx)
        }
        "tail" => {
            let job = cfg.tail.as_ref().ok_or_else(|| missing("tail"))?;
            run::run_tail(cfg, job, ctx)
        }
        "order-stats" => {
            let job = cfg.order_stats.as_ref().ok_or_else(|| missing("order-stats"))?;
            run::run_order_stats(cfg, job, ctx)
        }
        "sojourn" => {
            let job = cfg.sojourn.as_ref().ok_or_else(|| missing("sojourn"))?;
            run::run_sojourn(cfg, job, ctx)
        }
        "limit-law" => {
            let job = cfg.limit_law.as_ref().ok_or_else(|| missing("limit-law"))?;
            run::run_limit_law(cfg, job, ctx)
        }
        "validate-sampler" => {
            let job = cfg
                .validate_sampler
                .clone()
                .unwrap_or_default();
            run::run_validate_sampler(cfg, &job, ctx)
        }
        other => Err(CliError::Internal(format!("unknown command {other}"))),
    }
}

fn execute_run(name: &str, args: &RunArgs) -> Result<(), CliError> {
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".to_string()));
        }
        // Only fails if a global pool already exists, which cannot happen
        // this early in main.
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Internal(format!("cannot size worker pool: {e}")))?;
    }
    // A stale record from an earlier failed run in the same directory would
    // shadow this run's outcome.
    let _ = std::fs::remove_file(args.out.join("error.json"));
    let cfg = RunConfig::load(&args.config)?;
    let (master_seed, seed_source) = resolve_seed(args.seed, cfg.seed)?;
    let family = StreamFamily::new(master_seed);
    let ctx = RunContext {
        out_dir: &args.out,
        format: args.format,
        family,
    };
    let start = Instant::now();
    let artifacts = dispatch(name, &cfg, &ctx)?;
    let outputs = digest_outputs(&args.out, &artifacts.files)?;
    let manifest = RunManifest {
        schema: config::SCHEMA_VERSION,
        command: name.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed,
        seed_source,
        config: cfg,
        jobs: artifacts.jobs,
        outputs,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Internal(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(args.out.join("manifest.json"), text + "\n")
        .map_err(|e| CliError::Internal(format!("cannot write manifest: {e}")))?;
    log::info!(
        "{name}: wrote {} result file(s) to {}",
        manifest.outputs.len(),
        args.out.display()
    );
    Ok(())
}

fn execute_plot(args: &PlotArgs) -> Result<(), CliError> {
    let out = args.out.as_deref().unwrap_or(&args.results);
    let written = plot::emit_from_dir(&args.results, out)?;
    if written == 0 {
        return Err(CliError::Config(format!(
            "no recognized result JSON found in {} (expected pickands.json, tail.json, or sojourn.json)",
            args.results.display()
        )));
    }
    log::info!("rebuilt {written} plot-data file(s) into {}", out.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let name = cli.command.name();
    let result = match &cli.command {
        Command::EmitPlotData(args) => execute_plot(args),
        Command::Pickands(args)
        | Command::Tail(args)
        | Command::OrderStats(args)
        | Command::Sojourn(args)
        | Command::LimitLaw(args)
        | Command::ValidateSampler(args) => {
            let res = execute_run(name, args);
            if let Err(e) = &res {
                write_error_record(
                    &args.out,
                    &ErrorRecord {
                        exit_code: e.exit_code(),
                        message: e.message().to_string(),
                    },
                );
            }
            res
        }
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
