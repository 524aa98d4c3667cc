//! Experiment harness: dataset generation, seeded multi-run training,
//! bound verification, evaluation, and report emission.
//!
//! Every command is a plain function over a config struct so the CLI stays a
//! thin argument-parsing shell. Config precedence is CLI flags over a JSON
//! config file over defaults. Exit codes: 0 success, 1 config error, 2 data
//! error, 3 verification failure.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    collect_episode, greedy_action, Algorithm, BoundsMode, BoundsSource, EncoderKind, Learner,
    LearnerConfig, PolicySpec, Trajectory, UpdateStats,
};
use crate::bounds::{verify_bounds, VerifyReport};
use crate::bp::{load_bp, save_bp, BongardProblem};
use crate::env::{episode_return, reset, Action, EnvConfig, PAIR_COUNT};
use crate::synth::{
    generate_bp_with_id, Concept, FactorPredicate, GroundTruth, SceneDescription, ShapeKind,
    SynthConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Environment variable naming the default dataset root.
pub const DATA_ENV_VAR: &str = "BONGARD_DATA";

pub const METRICS_SCHEMA_LINE: &str = "# schema=1";
pub const METRICS_HEADER: &str =
    "seed,episode,steps,raw_return,discounted_return,policy_loss,value_loss,entropy,bounds_active";

pub const AGENT_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Data(_) => EXIT_DATA,
            HarnessError::Verify(_) => EXIT_VERIFY,
        }
    }
}

fn data_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Data(e.to_string())
}

/// SplitMix64; derives independent seed streams from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Named concept families the generator cycles through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptFamily {
    Fill,
    Numerosity,
    Shape,
    Size,
    Enclosure,
    Mixed,
}

impl std::str::FromStr for ConceptFamily {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fill" => Ok(Self::Fill),
            "numerosity" => Ok(Self::Numerosity),
            "shape" => Ok(Self::Shape),
            "size" => Ok(Self::Size),
            "enclosure" => Ok(Self::Enclosure),
            "mixed" => Ok(Self::Mixed),
            other => Err(HarnessError::Config(format!(
                "unknown concept family {other:?} (fill|numerosity|shape|size|enclosure|mixed)"
            ))),
        }
    }
}

/// Deterministic single-factor concept for puzzle `index` within a family;
/// parameterizations cycle so neighboring ids differ.
pub fn concept_for(family: ConceptFamily, index: usize, max_shapes: usize) -> Concept {
    match family {
        ConceptFamily::Fill => Concept::single(FactorPredicate::Fill {
            filled: index % 2 == 0,
        }),
        ConceptFamily::Numerosity => Concept::single(FactorPredicate::Numerosity {
            count: index % max_shapes.max(1) + 1,
        }),
        ConceptFamily::Shape => Concept::single(FactorPredicate::ShapeClass {
            kind: ShapeKind::ALL[index % 3],
        }),
        ConceptFamily::Size => Concept::single(FactorPredicate::Size {
            large: index % 2 == 0,
        }),
        ConceptFamily::Enclosure => Concept::single(FactorPredicate::Enclosure {
            present: index % 2 == 0,
        }),
        ConceptFamily::Mixed => {
            let families = [
                ConceptFamily::Fill,
                ConceptFamily::Shape,
                ConceptFamily::Numerosity,
                ConceptFamily::Size,
            ];
            concept_for(families[index % families.len()], index / families.len(), max_shapes)
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub family: ConceptFamily,
    pub count: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub canvas: usize,
    pub max_shapes: usize,
    pub leading_pairs: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            family: ConceptFamily::Mixed,
            count: 20,
            seed: 1,
            out_dir: PathBuf::from("dataset"),
            canvas: 64,
            max_shapes: 4,
            leading_pairs: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub concept: Concept,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub bps: Vec<ManifestEntry>,
}

/// Per-puzzle sidecar carrying the machine-readable ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptSidecar {
    pub factors: Vec<FactorPredicate>,
    pub k: usize,
    pub scenes: Vec<SceneDescription>,
}

/// Write `count` puzzles in the on-disk layout plus sidecars and a manifest.
pub fn cmd_generate(cfg: &GenerateConfig) -> Result<Manifest, HarnessError> {
    fs::create_dir_all(&cfg.out_dir).map_err(data_err)?;
    let mut manifest = Manifest { bps: Vec::new() };
    for index in 0..cfg.count {
        let concept = concept_for(cfg.family, index, cfg.max_shapes);
        let synth = SynthConfig {
            canvas_w: cfg.canvas,
            canvas_h: cfg.canvas,
            max_shapes: cfg.max_shapes,
            seed: derive_seed(cfg.seed, index as u64),
            leading_pairs: cfg.leading_pairs,
        };
        let bp = generate_bp_with_id(&concept, &synth, index as u64).map_err(data_err)?;
        let dir = cfg.out_dir.join(format!("{index}"));
        save_bp(&bp, &dir).map_err(data_err)?;
        let gt = bp.ground_truth().expect("generated puzzles carry ground truth");
        let sidecar = ConceptSidecar {
            factors: concept.predicates().to_vec(),
            k: concept.k(),
            scenes: gt.scenes.clone(),
        };
        fs::write(
            dir.join("concept.json"),
            serde_json::to_string_pretty(&sidecar).map_err(data_err)?,
        )
        .map_err(data_err)?;
        manifest.bps.push(ManifestEntry {
            id: index as u64,
            concept,
            k: sidecar.k,
        });
    }
    fs::write(
        cfg.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(data_err)?,
    )
    .map_err(data_err)?;
    Ok(manifest)
}

/// Load one puzzle directory, reattaching ground truth from the sidecar
/// when present.
pub fn load_puzzle(dir: &Path) -> Result<BongardProblem, HarnessError> {
    let bp = load_bp(dir).map_err(data_err)?;
    let sidecar_path = dir.join("concept.json");
    if !sidecar_path.is_file() {
        return Ok(bp);
    }
    let text = fs::read_to_string(&sidecar_path).map_err(data_err)?;
    let sidecar: ConceptSidecar = serde_json::from_str(&text).map_err(data_err)?;
    let concept = Concept::new(sidecar.factors).map_err(data_err)?;
    let gt = GroundTruth {
        concept,
        scenes: sidecar.scenes,
    };
    BongardProblem::new(
        bp.id(),
        bp.left().to_vec(),
        bp.right().to_vec(),
        Some(gt),
    )
    .map_err(data_err)
}

pub fn read_manifest(root: &Path) -> Result<Manifest, HarnessError> {
    let text = fs::read_to_string(root.join("manifest.json"))
        .map_err(|e| HarnessError::Data(format!("{}: {e}", root.display())))?;
    serde_json::from_str(&text).map_err(data_err)
}

pub fn load_dataset(root: &Path, ids: &[u64]) -> Result<Vec<BongardProblem>, HarnessError> {
    ids.iter()
        .map(|id| load_puzzle(&root.join(format!("{id}"))))
        .collect()
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Full training-run configuration; one CSV, checkpoint, and metadata file
/// is emitted per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub encoder: EncoderKind,
    pub bounds_mode: BoundsMode,
    pub swap_history_in_lower: bool,
    pub episode_length: usize,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub train_ids: Vec<u64>,
    pub eval_ids: Vec<u64>,
    pub image_side: usize,
    pub discount: f64,
    pub shuffle: bool,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub batch_episodes: usize,
    pub minibatch_size: usize,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lc = LearnerConfig::default();
        Self {
            algorithm: Algorithm::Ppo,
            encoder: EncoderKind::Snn,
            bounds_mode: BoundsMode::Off,
            swap_history_in_lower: false,
            episode_length: PAIR_COUNT,
            episodes: 2000,
            seeds: vec![1, 2, 3, 4, 5],
            train_ids: Vec::new(),
            eval_ids: Vec::new(),
            image_side: 16,
            discount: 0.99,
            shuffle: true,
            learning_rate: lc.learning_rate,
            clip_epsilon: lc.clip_epsilon,
            epochs: lc.epochs,
            entropy_coef: lc.entropy_coef,
            value_coef: lc.value_coef,
            batch_episodes: lc.batch_episodes,
            minibatch_size: lc.minibatch_size,
            data_root: PathBuf::new(),
            out_dir: PathBuf::from("runs/run"),
        }
    }
}

/// Partial config as read from `--config file.json` or built from CLI
/// flags; unset fields fall through to the layer below.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPatch {
    pub algorithm: Option<Algorithm>,
    pub encoder: Option<EncoderKind>,
    pub bounds_mode: Option<BoundsMode>,
    pub swap_history_in_lower: Option<bool>,
    pub episode_length: Option<usize>,
    pub episodes: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub train_ids: Option<Vec<u64>>,
    pub eval_ids: Option<Vec<u64>>,
    pub image_side: Option<usize>,
    pub discount: Option<f64>,
    pub shuffle: Option<bool>,
    pub learning_rate: Option<f64>,
    pub clip_epsilon: Option<f64>,
    pub epochs: Option<usize>,
    pub entropy_coef: Option<f64>,
    pub value_coef: Option<f64>,
    pub batch_episodes: Option<usize>,
    pub minibatch_size: Option<usize>,
    pub data_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn apply(mut self, patch: &RunPatch) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &patch.$field { self.$field = v.clone(); })*
            };
        }
        take!(
            algorithm,
            encoder,
            bounds_mode,
            swap_history_in_lower,
            episode_length,
            episodes,
            seeds,
            train_ids,
            eval_ids,
            image_side,
            discount,
            shuffle,
            learning_rate,
            clip_epsilon,
            epochs,
            entropy_coef,
            value_coef,
            batch_episodes,
            minibatch_size,
            data_root,
            out_dir
        );
        self
    }

    /// Defaults, then the JSON config file, then CLI flags.
    pub fn resolve(config_file: Option<&Path>, cli: &RunPatch) -> Result<Self, HarnessError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config_file {
            let text = fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let patch: RunPatch = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            cfg = cfg.apply(&patch);
        }
        cfg = cfg.apply(cli);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be nonempty".into()));
        }
        let train: BTreeSet<_> = self.train_ids.iter().collect();
        if self.eval_ids.iter().any(|id| train.contains(id)) {
            return Err(HarnessError::Config(
                "train and eval puzzle ids overlap".into(),
            ));
        }
        if self.episode_length == 0 || self.episode_length > PAIR_COUNT {
            return Err(HarnessError::Config(format!(
                "episode_length {} outside 1..={PAIR_COUNT}",
                self.episode_length
            )));
        }
        Ok(())
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            algorithm: self.algorithm,
            clip_epsilon: self.clip_epsilon,
            epochs: self.epochs,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            discount: self.discount,
            bounds_mode: self.bounds_mode,
            swap_history_in_lower: self.swap_history_in_lower,
            learning_rate: self.learning_rate,
            minibatch_size: self.minibatch_size,
            batch_episodes: self.batch_episodes,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            episode_length: self.episode_length,
            discount: self.discount,
            image_side: self.image_side,
            shuffle: self.shuffle,
        }
    }
}

/// One CSV line per completed episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub episode: usize,
    pub steps: usize,
    pub raw_return: f64,
    pub discounted_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub bounds_active: bool,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.episode,
            self.steps,
            self.raw_return,
            self.discounted_return,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            u8::from(self.bounds_active)
        )
    }

    pub fn parse(line: &str) -> Result<Self, HarnessError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(HarnessError::Data(format!(
                "metrics row has {} fields: {line:?}",
                fields.len()
            )));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| HarnessError::Data(format!("bad float {s:?}: {e}")))
        };
        Ok(Self {
            seed: fields[0].parse().map_err(data_err)?,
            episode: fields[1].parse().map_err(data_err)?,
            steps: fields[2].parse().map_err(data_err)?,
            raw_return: parse_f(fields[3])?,
            discounted_return: parse_f(fields[4])?,
            policy_loss: parse_f(fields[5])?,
            value_loss: parse_f(fields[6])?,
            entropy: parse_f(fields[7])?,
            bounds_active: fields[8] == "1",
        })
    }
}

/// On-disk agent snapshot consumed by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub episode_length: usize,
    pub spec: PolicySpec,
}

impl AgentCheckpoint {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(data_err)?;
        let ck: AgentCheckpoint = serde_json::from_str(&text).map_err(data_err)?;
        if ck.format_version != AGENT_CHECKPOINT_VERSION {
            return Err(HarnessError::Data(format!(
                "checkpoint version mismatch: {} (expected {AGENT_CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

/// Run metadata: enough to bit-reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub wall_seconds: f64,
}

fn version_string() -> String {
    let git = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string());
    match git {
        Some(g) if !g.is_empty() => format!("{}+{g}", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Train one seed to completion; returns the rows it wrote.
fn train_one_seed(
    config: &RunConfig,
    train_bps: &[BongardProblem],
    seed: u64,
) -> Result<(), HarnessError> {
    let started = Instant::now();
    let spec = PolicySpec::new(
        config.encoder,
        config.image_side,
        config.episode_length,
        config.discount,
        derive_seed(seed, 0),
    )
    .map_err(data_err)?;
    let mut learner = Learner::new(spec, config.learner_config(), derive_seed(seed, 1));
    let mut source = BoundsSource::new();
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let env_config = config.env_config();

    fs::create_dir_all(&config.out_dir).map_err(data_err)?;
    let csv_path = config.out_dir.join(format!("seed{seed}.csv"));
    let file = fs::File::create(&csv_path).map_err(data_err)?;
    let mut csv = std::io::BufWriter::new(file);
    writeln!(csv, "{METRICS_SCHEMA_LINE}").map_err(data_err)?;
    writeln!(csv, "{METRICS_HEADER}").map_err(data_err)?;

    let mut batch: Vec<Trajectory> = Vec::with_capacity(config.batch_episodes);
    let mut last_stats = UpdateStats::default();
    for episode in 0..config.episodes {
        let bp = &train_bps[episode % train_bps.len()];
        let env_seed = derive_seed(seed, 1000 + episode as u64);
        let (mut env, first) = reset(bp, &env_config, env_seed).map_err(data_err)?;
        let traj = collect_episode(
            &mut env,
            first,
            &learner.spec,
            config.bounds_mode,
            config.swap_history_in_lower,
            &mut source,
            bp.id(),
            config.discount,
            &mut act_rng,
        )
        .map_err(data_err)?;
        let row = MetricsRow {
            seed,
            episode,
            steps: traj.steps.len(),
            raw_return: traj.raw_return,
            discounted_return: traj.discounted_return,
            policy_loss: last_stats.policy_loss,
            value_loss: last_stats.value_loss,
            entropy: last_stats.entropy,
            bounds_active: traj.bounds_active,
        };
        batch.push(traj);
        if batch.len() == config.batch_episodes {
            last_stats = learner.update(&batch).map_err(data_err)?;
            batch.clear();
        }
        writeln!(csv, "{}", row.to_csv()).map_err(data_err)?;
    }
    csv.flush().map_err(data_err)?;

    let checkpoint = AgentCheckpoint {
        format_version: AGENT_CHECKPOINT_VERSION,
        algorithm: config.algorithm,
        episode_length: config.episode_length,
        spec: learner.spec.clone(),
    };
    fs::write(
        config.out_dir.join(format!("seed{seed}.checkpoint.json")),
        serde_json::to_string(&checkpoint).map_err(data_err)?,
    )
    .map_err(data_err)?;
    let meta = RunMetadata {
        config: config.clone(),
        seed,
        version: version_string(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(
        config.out_dir.join(format!("seed{seed}.meta.json")),
        serde_json::to_string_pretty(&meta).map_err(data_err)?,
    )
    .map_err(data_err)?;
    Ok(())
}

/// Ids used when the config leaves `train_ids` empty: even manifest indices
/// train, odd indices (unseen parameterizations) evaluate.
pub fn default_split(manifest: &Manifest) -> (Vec<u64>, Vec<u64>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, entry) in manifest.bps.iter().enumerate() {
        if i % 2 == 0 {
            train.push(entry.id);
        } else {
            eval.push(entry.id);
        }
    }
    (train, eval)
}

/// Train every seed as an independent worker; any failed seed fails the
/// command.
pub fn cmd_train(config: &RunConfig) -> Result<(), HarnessError> {
    config.validate()?;
    let train_ids = if config.train_ids.is_empty() {
        let manifest = read_manifest(&config.data_root)?;
        default_split(&manifest).0
    } else {
        config.train_ids.clone()
    };
    if train_ids.is_empty() {
        return Err(HarnessError::Data("no training puzzles".into()));
    }
    let train_bps = load_dataset(&config.data_root, &train_ids)?;

    let results: Vec<Result<(), HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| {
                let bps = &train_bps;
                scope.spawn(move || train_one_seed(config, bps, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r,
                Err(_) => Err(HarnessError::Data("training worker panicked".into())),
            })
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalBpReport {
    pub id: u64,
    pub mean_return: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_bp: Vec<EvalBpReport>,
    pub mean_return: f64,
    pub accuracy: f64,
}

/// Greedy rollout over the fixed pair order; no learning. With `oracle`
/// set, actions replay the true labels instead of the policy.
pub fn cmd_eval(
    checkpoint: &AgentCheckpoint,
    data_root: &Path,
    ids: &[u64],
    oracle: bool,
) -> Result<EvalReport, HarnessError> {
    let bps = load_dataset(data_root, ids)?;
    let env_config = EnvConfig {
        episode_length: PAIR_COUNT,
        discount: 1.0,
        image_side: checkpoint.spec.image_side,
        shuffle: false,
    };
    let mut per_bp = Vec::with_capacity(bps.len());
    for bp in &bps {
        let (mut env, mut state) = reset(bp, &env_config, 0).map_err(data_err)?;
        let mut correct = 0usize;
        loop {
            let action = if oracle {
                match env.peek_same_group() {
                    Some(true) => Action::Same,
                    Some(false) => Action::Different,
                    None => break,
                }
            } else {
                greedy_action(&checkpoint.spec, &state.to_f64()).map_err(data_err)?
            };
            let step = env.step(action).map_err(data_err)?;
            correct += usize::from(step.reward == 1);
            match step.next {
                Some(next) => state = next,
                None => break,
            }
        }
        let total = env.records().len();
        per_bp.push(EvalBpReport {
            id: bp.id(),
            mean_return: episode_return(env.records(), 1.0),
            accuracy: correct as f64 / total as f64,
        });
    }
    let mean_return = per_bp.iter().map(|r| r.mean_return).sum::<f64>() / per_bp.len() as f64;
    let accuracy = per_bp.iter().map(|r| r.accuracy).sum::<f64>() / per_bp.len() as f64;
    Ok(EvalReport {
        per_bp,
        mean_return,
        accuracy,
    })
}

// ---------------------------------------------------------------------------
// bounds-verify
// ---------------------------------------------------------------------------

/// Monte-Carlo containment plus oracle endpoint comparison; deterministic
/// per seed.
pub fn cmd_bounds_verify(trials: u64, seed: u64) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    verify_bounds(trials, &mut rng)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Mean/std return curves for one run directory (all seed CSVs).
#[derive(Debug, Clone)]
pub struct RunCurve {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn read_run_curve(dir: &Path) -> Result<RunCurve, HarnessError> {
    let mut per_seed: Vec<Vec<f64>> = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("seed") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for path in &entries {
        let text = fs::read_to_string(path).map_err(data_err)?;
        let returns: Vec<f64> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("seed,") && !l.is_empty())
            .map(|l| MetricsRow::parse(l).map(|r| r.raw_return))
            .collect::<Result<_, _>>()?;
        per_seed.push(returns);
    }
    if per_seed.is_empty() {
        return Err(HarnessError::Data(format!(
            "no seed CSVs in {}",
            dir.display()
        )));
    }
    let episodes = per_seed[0].len();
    if per_seed.iter().any(|s| s.len() != episodes) {
        return Err(HarnessError::Data(format!(
            "seed CSVs in {} disagree on episode count",
            dir.display()
        )));
    }
    let n = per_seed.len() as f64;
    let mut mean = Vec::with_capacity(episodes);
    let mut std = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let m = per_seed.iter().map(|s| s[ep]).sum::<f64>() / n;
        let v = per_seed.iter().map(|s| (s[ep] - m) * (s[ep] - m)).sum::<f64>() / n;
        mean.push(m);
        std.push(v.sqrt());
    }
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("run")
        .to_string();
    Ok(RunCurve { name, mean, std })
}

/// Trailing moving average; window 1 is the identity.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        let len = (i + 1).min(w);
        out.push(sum / len as f64);
    }
    out
}

const SVG_PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Aggregate run curves into a CSV summary and an SVG chart with one
/// polyline per run and a horizontal baseline rule at the random-agent
/// return of 72.
pub fn cmd_report(
    run_dirs: &[PathBuf],
    out_base: &Path,
    window: usize,
) -> Result<(), HarnessError> {
    if run_dirs.is_empty() {
        return Err(HarnessError::Config("no run directories given".into()));
    }
    let mut curves = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        curves.push(read_run_curve(dir)?);
    }
    let episodes = curves[0].mean.len();
    if curves.iter().any(|c| c.mean.len() != episodes) {
        return Err(HarnessError::Data(
            "runs disagree on episode count".into(),
        ));
    }
    for c in &mut curves {
        c.mean = smooth(&c.mean, window);
        c.std = smooth(&c.std, window);
    }

    // CSV summary.
    let mut csv = String::new();
    csv.push_str("episode");
    for c in &curves {
        csv.push_str(&format!(",{}_mean,{}_std", c.name, c.name));
    }
    csv.push('\n');
    for ep in 0..episodes {
        csv.push_str(&ep.to_string());
        for c in &curves {
            csv.push_str(&format!(",{},{}", c.mean[ep], c.std[ep]));
        }
        csv.push('\n');
    }
    let csv_path = out_base.with_extension("csv");
    fs::write(&csv_path, csv).map_err(data_err)?;

    let svg_path = out_base.with_extension("svg");
    fs::write(&svg_path, render_svg(&curves, episodes)).map_err(data_err)?;
    Ok(())
}

fn render_svg(curves: &[RunCurve], episodes: usize) -> String {
    let (width, height) = (840.0, 520.0);
    let (left, right, top, bottom) = (60.0, 20.0, 20.0, 40.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let y_max = curves
        .iter()
        .flat_map(|c| c.mean.iter().copied())
        .fold(144.0f64, f64::max);
    let x_of = |ep: usize| left + plot_w * ep as f64 / (episodes.max(2) - 1) as f64;
    let y_of = |v: f64| top + plot_h * (1.0 - v / y_max);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        height - bottom,
        width - right,
        height - bottom
    ));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        height - bottom
    ));
    for tick in [0.0, 36.0, 72.0, 108.0, 144.0] {
        if tick > y_max {
            continue;
        }
        let y = y_of(tick);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{tick}</text>\n",
            left - 6.0,
            y + 4.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{left}\" y2=\"{y}\" stroke=\"black\"/>\n",
            left - 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">episode</text>\n",
        left + plot_w / 2.0,
        height - 8.0
    ));
    // Random-agent baseline at 72.
    let yb = y_of(72.0);
    svg.push_str(&format!(
        "<line class=\"baseline\" x1=\"{left}\" y1=\"{yb}\" x2=\"{}\" y2=\"{yb}\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n",
        width - right
    ));
    for (i, c) in curves.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let points: Vec<String> = c
            .mean
            .iter()
            .enumerate()
            .map(|(ep, &v)| format!("{:.2},{:.2}", x_of(ep), y_of(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            width - right - 160.0,
            top + 16.0 * (i + 1) as f64,
            c.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
