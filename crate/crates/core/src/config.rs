//! Run configuration files.
//!
//! A run file is JSON with a `version` field. Training settings start from
//! the preset of the chosen benchmark and the `train` object overrides
//! individual keys (nested objects merge key by key). Unknown keys anywhere
//! are rejected. Relative paths resolve against the config file's directory.
//!
//! ```json
//! {
//!   "version": 1,
//!   "benchmark": "antiderivative",
//!   "dataset": "data/antiderivative.lfrd",
//!   "n_train": 100,
//!   "train": { "epochs_pretrain": 100, "arch": { "width": 32 } },
//!   "reports": { "freq_error": true }
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analysis::ContinuityConfig;
use crate::hypernet::HyperMode;
use crate::physics::Benchmark;
use crate::training::TrainConfig;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Optional report outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Reports {
    /// Write the loss-history CSV.
    pub history: bool,
    /// Record `Δ_k` of the first training sample during pre-training.
    pub freq_error: bool,
    /// Steps between `Δ_k` snapshots.
    pub freq_error_every: u64,
    /// Write the weight spectrum of the produced main network.
    pub spectrum: bool,
}

impl Default for Reports {
    fn default() -> Self {
        Self {
            history: true,
            freq_error: false,
            freq_error_every: 10,
            spectrum: false,
        }
    }
}

/// Ablation variants; each runs the shared training config in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSpec {
    pub modes: Vec<HyperMode>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            modes: vec![HyperMode::FourierReduced, HyperMode::SingleHyper],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    version: u32,
    benchmark: Option<Benchmark>,
    #[serde(default)]
    train: Map<String, Value>,
    dataset: Option<PathBuf>,
    eval_dataset: Option<PathBuf>,
    n_train: Option<usize>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    reports: Reports,
    continuity: Option<ContinuityConfig>,
    #[serde(default)]
    ablation: AblationSpec,
}

/// Command-line overrides applied on top of a run file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub benchmark: Option<Benchmark>,
    pub mode: Option<HyperMode>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// A validated run: training settings, paths and report toggles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub version: u32,
    pub train: Option<TrainConfig>,
    pub dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub n_train: Option<usize>,
    pub out_dir: PathBuf,
    pub reports: Reports,
    pub continuity: ContinuityConfig,
    pub ablation: AblationSpec,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Preset for `bench` with `patch` merged in, then schema-checked.
pub fn train_config_from(bench: Benchmark, patch: Map<String, Value>) -> Result<TrainConfig> {
    if let Some(b) = patch.get("benchmark") {
        if b != &Value::String(bench.name().into()) {
            return Err(Error::config(
                "`train.benchmark` disagrees with the run benchmark",
            ));
        }
    }
    let mut value = serde_json::to_value(TrainConfig::preset(bench)).expect("serializable");
    merge(&mut value, Value::Object(patch));
    // The architecture input size always follows the benchmark.
    value["arch"]["input_dim"] = bench.input_dim().into();
    let cfg: TrainConfig =
        serde_json::from_value(value).map_err(|e| Error::config(format!("train: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Defaults for a run without a file.
    pub fn bare(overrides: &Overrides) -> Result<Self> {
        let raw = RawRunConfig {
            version: SCHEMA_VERSION,
            benchmark: None,
            train: Map::new(),
            dataset: None,
            eval_dataset: None,
            n_train: None,
            out_dir: None,
            reports: Reports::default(),
            continuity: None,
            ablation: AblationSpec::default(),
        };
        Self::resolve(raw, Path::new("."), overrides)
    }

    pub fn from_json(text: &str, base_dir: &Path, overrides: &Overrides) -> Result<Self> {
        let raw: RawRunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        Self::resolve(raw, base_dir, overrides)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, dir, overrides).map_err(|e| e.context(path.display()))
    }

    fn resolve(mut raw: RawRunConfig, base_dir: &Path, o: &Overrides) -> Result<Self> {
        if raw.version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                raw.version
            )));
        }
        let bench = o.benchmark.or(raw.benchmark);
        if bench.is_some() {
            if let Some(mode) = o.mode {
                raw.train.insert(
                    "mode".into(),
                    serde_json::to_value(mode).expect("serializable"),
                );
            }
            if let Some(seed) = o.seed {
                raw.train.insert("seed".into(), seed.into());
            }
        }
        let train = match bench {
            Some(b) => Some(train_config_from(b, raw.train)?),
            None if raw.train.is_empty() => None,
            None => return Err(Error::config("`train` settings need a benchmark")),
        };
        let mut continuity = raw.continuity.unwrap_or_default();
        if let Some(seed) = o.seed {
            continuity.seed = seed;
        }
        if raw.n_train == Some(0) {
            return Err(Error::config("n_train must be positive"));
        }
        if raw.reports.freq_error_every == 0 {
            return Err(Error::config("reports.freq_error_every must be positive"));
        }
        if raw.ablation.modes.is_empty() {
            return Err(Error::config("ablation.modes must not be empty"));
        }
        let at = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        Ok(Self {
            version: raw.version,
            train,
            dataset: raw.dataset.map(at),
            eval_dataset: raw.eval_dataset.map(at),
            n_train: raw.n_train,
            out_dir: o
                .out_dir
                .clone()
                .or(raw.out_dir.map(at))
                .unwrap_or_else(|| PathBuf::from(".")),
            reports: raw.reports,
            continuity,
            ablation: raw.ablation,
        })
    }

    /// Training settings, or a configuration error naming `what` needs them.
    pub fn train(&self, what: &str) -> Result<&TrainConfig> {
        self.train.as_ref().ok_or_else(|| {
            Error::config(format!("{what} needs a benchmark (config or --benchmark)"))
        })
    }
}
