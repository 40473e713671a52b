//! `iastar` command-line front end: map generation, single-query planning,
//! encoder training and benchmarking.

mod dataset;
mod plan;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use iastar::bench::{parse_methods, run_benchmark, TrialPlan};
use iastar::gridmap::GeneratorKind;
use iastar::trainer::{save_log, train, Mode, OptimizerKind, TrainConfig, TrainError};

const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unusable inputs; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// No path could be produced; exit code 1.
    #[error("{0}")]
    Planning(String),
    /// Anything else that went wrong while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Planning(_) | CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Artifact and file format versions; kept in step with the library
/// constants by a test.
const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (gridmap v1, iatensor v1, arch v1)");

#[derive(Debug, Parser)]
#[command(name = "iastar", version, long_version = LONG_VERSION, about = "Grid path planning with a learned search bias")]
struct Cli {
    /// Seed for every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training and benchmarking.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded maps and start/goal pairs to a directory.
    Generate(GenerateArgs),
    /// Plan one query on a map file.
    Plan(plan::PlanArgs),
    /// Train the encoder on a generated dataset.
    Train(TrainArgs),
    /// Compare planners on seeded instances.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Generator: maze, random-blocks or rooms.
    #[arg(long, value_parser = parse_kind)]
    kind: GeneratorKind,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Obstacle share for random-blocks and rooms; mazes ignore it.
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    /// Number of maps, one start/goal pair each.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Imperative,
    Supervised,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "imperative")]
    mode: ModeArg,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1.0)]
    w_a: f64,
    #[arg(long, default_value_t = 1.0)]
    w_l: f64,
    /// Share of instances, taken from the end, used for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Checkpoint path; the architecture goes to `<out>.arch`.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// TOML trial plan; defaults apply to missing keys.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value = "astar,wastar:2,jps")]
    methods: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<GeneratorKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Generate(args) => generate(&args, seed.unwrap_or(DEFAULT_SEED)),
        Command::Plan(args) => plan::run(&args),
        Command::Train(args) => train_cmd(&args, seed.unwrap_or(DEFAULT_SEED)),
        Command::Bench(args) => bench(&args, seed),
    }
}

fn generate(args: &GenerateArgs, seed: u64) -> Result<(), CliError> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let entries = dataset::generate(args.kind, args.width, args.height, args.density, args.count, seed, &args.out_dir)?;
    eprintln!("wrote {} instances to {}", entries, args.out_dir.display());
    Ok(())
}

fn train_cmd(args: &TrainArgs, seed: u64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.val_fraction) {
        return Err(CliError::Usage("--val-fraction must be in [0, 1)".into()));
    }
    let instances = dataset::load(&args.data)?;
    let n_val = (instances.len() as f64 * args.val_fraction).round() as usize;
    if n_val >= instances.len() {
        return Err(CliError::Usage("no training instances left after the validation split".into()));
    }
    let (tr, va) = instances.split_at(instances.len() - n_val);
    let config = TrainConfig {
        w_a: args.w_a,
        w_l: args.w_l,
        lr: args.lr,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => TrainConfig::default().optimizer,
            OptimizerArg::Sgd => OptimizerKind::SgdMomentum { momentum: 0.9 },
        },
        epochs: args.epochs,
        batch: args.batch,
        seed,
        mode: match args.mode {
            ModeArg::Imperative => Mode::Imperative,
            ModeArg::Supervised => Mode::Supervised,
        },
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = match train(tr, va, &config) {
        Ok(o) => o,
        Err(TrainError::Divergence { epoch, what, last_good }) => {
            last_good.save(&args.out).map_err(runtime)?;
            return Err(CliError::Runtime(format!(
                "training diverged at epoch {epoch} (non-finite {what}); last good parameters saved to {}",
                args.out.display()
            )));
        }
        Err(e) => return Err(runtime(e)),
    };
    outcome.model.save(&args.out).map_err(runtime)?;
    if let Some(log) = &args.log {
        save_log(log, &outcome.log).map_err(runtime)?;
    }
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "epoch {}: mean total {:.4}, val AL {:.4}, val Exp {:.2}",
            last.epoch, last.mean_total, last.val_al, last.val_exp
        );
    }
    Ok(())
}

fn bench(args: &BenchArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut plan = match &args.plan {
        Some(p) => TrialPlan::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => TrialPlan::default(),
    };
    if let Some(s) = seed {
        plan.seed = s;
    }
    let methods = parse_methods(&args.methods).map_err(|e| CliError::Usage(e.to_string()))?;
    if methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    run_benchmark(&plan, &methods, Some(&args.out)).map_err(runtime)?;
    let table = std::fs::read_to_string(args.out.join("table.txt")).map_err(runtime)?;
    let mut out = std::io::stdout().lock();
    out.write_all(table.as_bytes()).map_err(runtime)?;
    Ok(())
}
