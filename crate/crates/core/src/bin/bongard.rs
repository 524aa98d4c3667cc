//! Command-line entry point: dataset generation, training, evaluation,
//! bound verification, and report emission.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bongard::agents::{Algorithm, BoundsMode, EncoderKind};
use bongard::harness::{
    cmd_bounds_verify, cmd_eval, cmd_generate, cmd_report, cmd_train, read_manifest,
    AgentCheckpoint, ConceptFamily, GenerateConfig, HarnessError, RunConfig, RunPatch,
    DATA_ENV_VAR, EXIT_VERIFY,
};

#[derive(Parser)]
#[command(name = "bongard", version, about = "Bongard problems as a causal RL laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic puzzle dataset with ground-truth concepts.
    Generate(GenerateArgs),
    /// Train agents across seeds; one CSV/checkpoint/metadata per seed.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint over a puzzle set.
    Eval(EvalArgs),
    /// Monte-Carlo validity and tightness check of the causal bounds.
    BoundsVerify(BoundsVerifyArgs),
    /// Aggregate run CSVs into a summary CSV and SVG chart.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Concept family: fill|numerosity|shape|size|enclosure|mixed.
    #[arg(long, default_value = "mixed")]
    concept: String,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    canvas: usize,
    #[arg(long, default_value_t = 4)]
    max_shapes: usize,
    /// Derive right images from left counterparts (leading pairs).
    #[arg(long)]
    leading: bool,
}

#[derive(Args)]
#[command(next_help_heading = "Training options (flags override --config which overrides defaults)")]
struct TrainArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm: ppo|a2c.
    #[arg(long)]
    algo: Option<String>,
    /// Encoder: mlp|snn.
    #[arg(long)]
    model: Option<String>,
    /// Bounds mode: off|base|extended.
    #[arg(long)]
    bounds: Option<String>,
    /// Use the matching action's history probability in the lower bounds.
    #[arg(long)]
    swap_history_lower: bool,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    episode_length: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// One seed (shorthand for --seeds with a single entry).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated training puzzle ids (default: even manifest ids).
    #[arg(long, value_delimiter = ',')]
    train_ids: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    eval_ids: Option<Vec<u64>>,
    #[arg(long)]
    image_side: Option<usize>,
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    entropy_coef: Option<f64>,
    /// Dataset root; defaults to $BONGARD_DATA.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root; defaults to $BONGARD_DATA.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Puzzle ids; defaults to every id in the manifest.
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<u64>>,
    /// Replay ground-truth labels instead of the policy (accuracy 1.0).
    #[arg(long)]
    oracle: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsVerifyArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output base path; writes <out>.csv and <out>.svg.
    #[arg(long)]
    out: PathBuf,
    /// Smoothing window over episodes.
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// Run directories (each holding seed*.csv files).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, HarnessError> {
    match s {
        "ppo" => Ok(Algorithm::Ppo),
        "a2c" => Ok(Algorithm::A2c),
        other => Err(HarnessError::Config(format!(
            "unknown algorithm {other:?} (ppo|a2c)"
        ))),
    }
}

fn parse_encoder(s: &str) -> Result<EncoderKind, HarnessError> {
    match s {
        "mlp" => Ok(EncoderKind::Mlp),
        "snn" => Ok(EncoderKind::Snn),
        other => Err(HarnessError::Config(format!(
            "unknown encoder {other:?} (mlp|snn)"
        ))),
    }
}

fn parse_bounds(s: &str) -> Result<BoundsMode, HarnessError> {
    match s {
        "off" => Ok(BoundsMode::Off),
        "base" => Ok(BoundsMode::Base),
        "extended" => Ok(BoundsMode::Extended),
        other => Err(HarnessError::Config(format!(
            "unknown bounds mode {other:?} (off|base|extended)"
        ))),
    }
}

fn data_root(flag: Option<PathBuf>) -> Result<PathBuf, HarnessError> {
    flag.or_else(|| std::env::var_os(DATA_ENV_VAR).map(PathBuf::from))
        .ok_or_else(|| {
            HarnessError::Config(format!("no dataset root: pass --data or set {DATA_ENV_VAR}"))
        })
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Generate(args) => {
            let family: ConceptFamily = args.concept.parse()?;
            let cfg = GenerateConfig {
                family,
                count: args.count,
                seed: args.seed,
                out_dir: args.out,
                canvas: args.canvas,
                max_shapes: args.max_shapes,
                leading_pairs: args.leading,
            };
            let manifest = cmd_generate(&cfg)?;
            println!(
                "generated {} puzzles under {}",
                manifest.bps.len(),
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Command::Train(args) => {
            let mut patch = RunPatch {
                swap_history_in_lower: args.swap_history_lower.then_some(true),
                episodes: args.episodes,
                episode_length: args.episode_length,
                seeds: args.seeds.or_else(|| args.seed.map(|s| vec![s])),
                train_ids: args.train_ids,
                eval_ids: args.eval_ids,
                image_side: args.image_side,
                discount: args.discount,
                learning_rate: args.learning_rate,
                entropy_coef: args.entropy_coef,
                out_dir: args.out,
                ..RunPatch::default()
            };
            if let Some(a) = args.algo.as_deref() {
                patch.algorithm = Some(parse_algorithm(a)?);
            }
            if let Some(m) = args.model.as_deref() {
                patch.encoder = Some(parse_encoder(m)?);
            }
            if let Some(b) = args.bounds.as_deref() {
                patch.bounds_mode = Some(parse_bounds(b)?);
            }
            patch.data_root = Some(data_root(args.data)?);
            let config = RunConfig::resolve(args.config.as_deref(), &patch)?;
            cmd_train(&config)?;
            println!(
                "trained {} seeds into {}",
                config.seeds.len(),
                config.out_dir.display()
            );
            Ok(0)
        }
        Command::Eval(args) => {
            let checkpoint = AgentCheckpoint::load(&args.checkpoint)?;
            let root = data_root(args.data)?;
            let ids = match args.ids {
                Some(ids) => ids,
                None => read_manifest(&root)?.bps.iter().map(|b| b.id).collect(),
            };
            let report = cmd_eval(&checkpoint, &root, &ids, args.oracle)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| HarnessError::Data(e.to_string()))?;
            match args.out {
                Some(path) => std::fs::write(path, json)
                    .map_err(|e| HarnessError::Data(e.to_string()))?,
                None => println!("{json}"),
            }
            Ok(0)
        }
        Command::BoundsVerify(args) => {
            let report = cmd_bounds_verify(args.trials, args.seed);
            let json = serde_json::to_string(&report)
                .map_err(|e| HarnessError::Data(e.to_string()))?;
            println!("{json}");
            if let Some(path) = args.out {
                std::fs::write(path, &json).map_err(|e| HarnessError::Data(e.to_string()))?;
            }
            if report.passed() {
                Ok(0)
            } else {
                Ok(EXIT_VERIFY)
            }
        }
        Command::Report(args) => {
            cmd_report(&args.runs, &args.out, args.window)?;
            println!(
                "wrote {} and {}",
                args.out.with_extension("csv").display(),
                args.out.with_extension("svg").display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
