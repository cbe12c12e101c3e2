//! Argument parsing and settings resolution for the `synthcolon` binary.
//!
//! Settings come from three layers: built-in defaults, an optional JSON
//! config file, then command-line flags. Later layers win. The merged
//! document is deserialized strictly, so a misspelled key anywhere is an
//! error that names the key.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use synthcolon::dataset::DatasetConfig;
use synthcolon::losses::LossWeights;
use synthcolon::toy::ToyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub target_mean: f64,
    pub samples: usize,
    /// Resolution of the visibility passes used while searching.
    pub resolution: (usize, usize),
    pub iterations: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings { target_mean: 0.0587, samples: 300, resolution: (160, 160), iterations: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub predictions: Option<PathBuf>,
    /// A manifest file or a directory of mask PNGs.
    pub ground_truth: Option<PathBuf>,
    pub threshold: f64,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings { predictions: None, ground_truth: None, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    /// Dataset root containing `manifest.jsonl`, or the manifest itself.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub seeds: u64,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings { seeds: 20, epsilon: 1e-5, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToySettings {
    /// Save the translated first validation image every this many steps.
    pub snapshot_every: usize,
    /// When non-zero, also run the single-reference protocol with this
    /// many reference images.
    pub repeats: usize,
}

impl Default for TrainToySettings {
    fn default() -> Self {
        TrainToySettings { snapshot_every: 500, repeats: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub sizes: Vec<usize>,
    pub seeds: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings { sizes: vec![10, 100, 1000], seeds: 3 }
    }
}

/// Fully resolved settings for every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// Worker threads; `None` uses every logical core.
    pub jobs: Option<usize>,
    pub out: PathBuf,
    /// Weights of the joint objective at full scale.
    pub losses: LossWeights,
    pub dataset: DatasetConfig,
    pub stats: StatsSettings,
    pub calibration: CalibrationSettings,
    pub evaluate: EvaluateSettings,
    pub gradcheck: GradcheckSettings,
    pub toy: ToyConfig,
    pub train_toy: TrainToySettings,
    pub ablation: AblationSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            jobs: None,
            out: PathBuf::from("out"),
            losses: LossWeights::default(),
            dataset: DatasetConfig::default(),
            stats: StatsSettings::default(),
            calibration: CalibrationSettings::default(),
            evaluate: EvaluateSettings::default(),
            gradcheck: GradcheckSettings::default(),
            toy: ToyConfig::default(),
            train_toy: TrainToySettings::default(),
            ablation: AblationSettings::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path} is not valid JSON: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("config {path} must be a JSON object")]
    NotObject { path: PathBuf },
    #[error("invalid settings: {0}")]
    Invalid(String),
}

/// Deep merge: objects merge key by key, anything else in `top` replaces
/// the value in `base`.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

/// A top-level `seed` also sets the dataset and toy seeds, so one value
/// drives every subcommand.
fn spread_seed(layer: &mut Value) {
    let Some(seed) = layer.get("seed").cloned() else { return };
    merge(layer, json!({ "dataset": { "master_seed": seed }, "toy": { "seed": seed } }));
}

/// Reads a config file. A `run.json` written by an earlier run is accepted
/// too; its `settings` object is used.
pub fn read_config_file(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    let mut v: Value = serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
    if !v.is_object() {
        return Err(ConfigError::NotObject { path: path.into() });
    }
    if let (Some(Value::String(_)), Some(s @ Value::Object(_))) = (v.get("command"), v.get("settings")) {
        v = s.clone();
    }
    Ok(v)
}

/// Defaults, then `file`, then `flags`.
pub fn resolve_settings(file: Option<Value>, flags: Value) -> Result<Settings, ConfigError> {
    let mut doc = serde_json::to_value(Settings::default()).expect("settings serialize");
    for mut layer in file.into_iter().chain([flags]) {
        spread_seed(&mut layer);
        merge(&mut doc, layer);
    }
    let settings: Settings = serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    settings.dataset.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    settings.losses.validate().map_err(ConfigError::Invalid)?;
    settings.toy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if settings.jobs == Some(0) {
        return Err(ConfigError::Invalid("jobs must be at least 1".into()));
    }
    Ok(settings)
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub settings: Settings,
}

pub fn write_run_json(dir: &Path, command: &str, settings: &Settings) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let rec = RunRecord { command: command.to_string(), settings: settings.clone() };
    let mut bytes = serde_json::to_vec_pretty(&rec).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("run.json"), bytes)
}

#[derive(Debug, Parser)]
#[command(name = "synthcolon", version, about = "Synthetic colonoscopy data and joint translation/segmentation tools")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON settings file; a previous run.json also works.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a dataset of image/mask/depth/mesh samples.
    Generate(GenerateArgs),
    /// Summarize the polyp-area statistics of a dataset manifest.
    Stats(StatsArgs),
    /// Search the polyp radius range that hits a target mean polyp area.
    Calibrate(CalibrateArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every loss.
    Gradcheck(GradcheckArgs),
    /// Joint translation and segmentation training on toy domains.
    TrainToy(TrainToyArgs),
    /// Toy training across synthetic-set sizes and seeds.
    Ablate(AblateArgs),
    /// Repeat the command recorded in a run.json with its settings.
    Rerun {
        run_json: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Stats(_) => "stats",
            Command::Calibrate(_) => "calibrate",
            Command::Evaluate(_) => "evaluate",
            Command::Gradcheck(_) => "gradcheck",
            Command::TrainToy(_) => "train-toy",
            Command::Ablate(_) => "ablate",
            Command::Rerun { .. } => "rerun",
        }
    }
}

fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(w)?, p(h)?))
}

#[derive(Debug, Args, Default)]
pub struct GenerateArgs {
    /// Number of retained samples.
    #[arg(long)]
    pub count: Option<usize>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(usize, usize)>,
    /// Render at 2x and box-filter colour down.
    #[arg(long)]
    pub supersample: bool,
}

#[derive(Debug, Args, Default)]
pub struct StatsArgs {
    /// Dataset root containing manifest.jsonl, or the manifest itself.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Resolution of the search passes as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(usize, usize)>,
}

#[derive(Debug, Args, Default)]
pub struct EvaluateArgs {
    /// Directory of predicted mask PNGs.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Manifest file or directory of ground-truth masks.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Prediction binarization threshold on [0, 1] intensity.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Number of real-style images; 1 is single-reference mode.
    #[arg(long)]
    pub real_count: Option<usize>,
    #[arg(long)]
    pub reference_index: Option<usize>,
    /// Also run the single-reference protocol over this many images.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct AblateArgs {
    /// Comma-separated synthetic-set sizes, ascending.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Seeds per size.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

fn put(obj: &mut Map<String, Value>, path: &[&str], v: Value) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = obj;
    for p in parents {
        cur = cur.entry(p.to_string()).or_insert_with(|| json!({})).as_object_mut().expect("object");
    }
    cur.insert(last.to_string(), v);
}

/// Settings overlay made of the flags that were actually given.
pub fn flag_overlay(cli: &Cli) -> Value {
    let mut o = Map::new();
    if let Some(s) = cli.seed {
        put(&mut o, &["seed"], json!(s));
    }
    if let Some(j) = cli.jobs {
        put(&mut o, &["jobs"], json!(j));
    }
    if let Some(p) = &cli.out {
        put(&mut o, &["out"], json!(p));
    }
    match &cli.command {
        Command::Generate(a) => {
            if let Some(c) = a.count {
                put(&mut o, &["dataset", "sample_count"], json!(c));
            }
            if let Some(r) = a.resolution {
                put(&mut o, &["dataset", "resolution"], json!(r));
            }
            if a.supersample {
                put(&mut o, &["dataset", "supersample"], json!(true));
            }
        }
        Command::Stats(a) => {
            if let Some(v) = &a.dataset {
                put(&mut o, &["stats", "dataset"], json!(v));
            }
        }
        Command::Rerun { .. } => {}
        Command::Calibrate(a) => {
            if let Some(v) = a.target {
                put(&mut o, &["calibration", "target_mean"], json!(v));
            }
            if let Some(v) = a.samples {
                put(&mut o, &["calibration", "samples"], json!(v));
            }
            if let Some(v) = a.iterations {
                put(&mut o, &["calibration", "iterations"], json!(v));
            }
            if let Some(v) = a.resolution {
                put(&mut o, &["calibration", "resolution"], json!(v));
            }
        }
        Command::Evaluate(a) => {
            if let Some(v) = &a.pred {
                put(&mut o, &["evaluate", "predictions"], json!(v));
            }
            if let Some(v) = &a.gt {
                put(&mut o, &["evaluate", "ground_truth"], json!(v));
            }
            if let Some(v) = a.threshold {
                put(&mut o, &["evaluate", "threshold"], json!(v));
            }
        }
        Command::Gradcheck(a) => {
            if let Some(v) = a.seeds {
                put(&mut o, &["gradcheck", "seeds"], json!(v));
            }
            if let Some(v) = a.epsilon {
                put(&mut o, &["gradcheck", "epsilon"], json!(v));
            }
        }
        Command::TrainToy(a) => {
            if let Some(v) = a.steps {
                put(&mut o, &["toy", "steps"], json!(v));
            }
            if let Some(v) = a.lambda_s {
                put(&mut o, &["toy", "weights", "lambda_s"], json!(v));
            }
            if let Some(v) = a.real_count {
                put(&mut o, &["toy", "real_count"], json!(v));
            }
            if let Some(v) = a.reference_index {
                put(&mut o, &["toy", "reference_index"], json!(v));
            }
            if let Some(v) = a.repeats {
                put(&mut o, &["train_toy", "repeats"], json!(v));
            }
            if let Some(v) = a.snapshot_every {
                put(&mut o, &["train_toy", "snapshot_every"], json!(v));
            }
        }
        Command::Ablate(a) => {
            if let Some(v) = &a.sizes {
                put(&mut o, &["ablation", "sizes"], json!(v));
            }
            if let Some(v) = a.seeds {
                put(&mut o, &["ablation", "seeds"], json!(v));
            }
            if let Some(v) = a.steps {
                put(&mut o, &["toy", "steps"], json!(v));
            }
        }
    }
    Value::Object(o)
}

/// Resolves the settings for a parsed command line.
pub fn resolve(cli: &Cli) -> Result<Settings, ConfigError> {
    let file = cli.config.as_deref().map(read_config_file).transpose()?;
    resolve_settings(file, flag_overlay(cli))
}
