//! The `lfr` command line.
//!
//! Every command writes into the output directory (`--out`, else the
//! config's `out_dir`, else the working directory). Files are written
//! atomically and never overwrite an input. Each command also writes a
//! `*.manifest.json` whose `run` object is deterministic for a given seed;
//! wall-clock times live only in its `timestamps` object.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O or malformed input file.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    continuity_study, evaluate, predict_field, relative_l2, run_ablation, theorem2_sweep,
    verify_theorem1, weight_spectrum_report, write_ablation_csv, FrequencyErrorObserver,
};
use crate::config::{Overrides, RunConfig};
use crate::hypernet::{parameter_count, HyperMode, HyperNetParams, ParameterSample};
use crate::nets::{Activation, MainNetWeights};
use crate::par::Execution;
use crate::physics::Benchmark;
use crate::problems::{Dataset, SolverSettings, DEFAULT_SENSORS};
use crate::rng::SeedTree;
use crate::tensors::atomic_write;
use crate::training::checkpoint::MAIN_NET_KIND;
use crate::training::{
    finetune, pretrain, weights_from_file, weights_to_file, write_history_csv, Checkpoint,
    HistoryRow, ParamFile, TrainConfig, TrainError, TrainObserver,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "lfr",
    version,
    about = "Layered Fourier-reduced physics-informed neural operator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_benchmark)]
    pub benchmark: Option<Benchmark>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<HyperMode>,
    /// Epoch count of the command's training phase.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

fn parse_benchmark(s: &str) -> std::result::Result<Benchmark, String> {
    s.parse()
}

fn parse_mode(s: &str) -> std::result::Result<HyperMode, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample parameters and solve reference fields into a dataset file.
    Generate {
        /// Number of samples.
        #[arg(long, short = 'n')]
        samples: usize,
    },
    /// Pre-train the hypernetworks over a dataset.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune the generated main network on one sample.
    Finetune {
        #[command(flatten)]
        data: DataArgs,
        /// Pre-trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        eta_index: usize,
    },
    /// Relative L2 error of a checkpoint or weight file on a dataset.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `all` or a half-open index range `a..b`.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Reports: spectrum, freq-error, theorem1, theorem2, params, continuity, ablation.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file; overrides the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub kind: String,
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint or weight file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub eta_index: usize,
    /// Theorem-2 sweep size.
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Multiplier on the constructive α bound.
    #[arg(long, default_value_t = 1.0)]
    pub alpha_scale: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
    started: u64,
}

pub fn run(cli: &Cli) -> Result<()> {
    let overrides = Overrides {
        benchmark: cli.benchmark,
        mode: cli.mode,
        seed: cli.seed,
        epochs: cli.epochs,
        out_dir: cli.out.clone(),
    };
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p, &overrides)?,
        None => RunConfig::bare(&overrides)?,
    };
    let ctx = Ctx {
        cli,
        cfg,
        started: unix_now(),
    };
    match &cli.command {
        Command::Generate { samples } => ctx.generate(*samples),
        Command::Pretrain { data, resume } => ctx.pretrain(data, resume.as_deref()),
        Command::Finetune {
            data,
            checkpoint,
            eta_index,
        } => ctx.finetune(data, checkpoint, *eta_index),
        Command::Evaluate {
            data,
            checkpoint,
            split,
        } => ctx.evaluate(data, checkpoint, split),
        Command::Analyze(a) => ctx.analyze(a),
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).map_err(|e| Error::from(e).context(path.display()))
}

fn load_param_file(path: &Path) -> Result<ParamFile> {
    ParamFile::load(path).map_err(|e| Error::from(e).context(path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn history_bytes(rows: &[HistoryRow]) -> Vec<u8> {
    csv_bytes(|b| write_history_csv(b, rows))
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// A pre-trained checkpoint or a bare main network.
enum Model {
    Hyper(Checkpoint),
    Main(MainNetWeights, Activation),
}

impl Model {
    fn load(path: &Path) -> Result<Self> {
        let file = load_param_file(path)?;
        let model = if file.kind == MAIN_NET_KIND {
            let (w, act) = weights_from_file(&file)?;
            Model::Main(w, act)
        } else {
            Model::Hyper(Checkpoint::from_file(&file)?)
        };
        Ok(model)
    }

    fn activation(&self) -> Activation {
        match self {
            Model::Hyper(c) => c.activation,
            Model::Main(_, act) => *act,
        }
    }

    fn weights_for(&self, eta: &ParameterSample) -> Result<MainNetWeights> {
        match self {
            Model::Hyper(c) => Ok(c.params.generate_weights(eta)?),
            Model::Main(w, _) => Ok(w.clone()),
        }
    }
}

/// Progress, optional `Δ_k` recording and periodic checkpoint files.
struct CliObserver<'a> {
    freq: Option<FrequencyErrorObserver>,
    out: &'a Path,
    quiet: bool,
}

impl TrainObserver for CliObserver<'_> {
    fn checkpoint(&mut self, ckpt: &Checkpoint) -> std::result::Result<(), TrainError> {
        let path = self
            .out
            .join(format!("checkpoint_epoch{}.lfrp", ckpt.epoch));
        atomic_write(&path, &ckpt.to_file().to_bytes())?;
        if !self.quiet {
            eprintln!("epoch {}: wrote {}", ckpt.epoch, path.display());
        }
        Ok(())
    }

    fn after_step(
        &mut self,
        step: u64,
        params: &HyperNetParams,
    ) -> std::result::Result<(), TrainError> {
        match &mut self.freq {
            Some(f) => f.after_step(step, params),
            None => Ok(()),
        }
    }
}

impl Ctx<'_> {
    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn say(&self, msg: impl std::fmt::Display) {
        if !self.cli.quiet {
            eprintln!("{msg}");
        }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out().join(name);
        for input in [&self.cli.config, &self.cfg.dataset, &self.cfg.eval_dataset]
            .into_iter()
            .flatten()
        {
            if same_file(input, &path) {
                return Err(Error::config(format!(
                    "refusing to overwrite input {}",
                    input.display()
                )));
            }
        }
        atomic_write(&path, bytes).map_err(|e| Error::from(e).context(path.display()))?;
        self.say(format_args!("wrote {}", path.display()));
        Ok(path)
    }

    fn manifest(&self, name: &str, command: &str, run: Value) -> Result<()> {
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "run": run,
            "timestamps": { "started_unix": self.started, "finished_unix": unix_now() },
        });
        self.write(name, &json_bytes(&doc)).map(|_| ())
    }

    fn train_cfg(&self, what: &str) -> Result<TrainConfig> {
        self.cfg.train(what).cloned()
    }

    fn dataset_path(&self, data: &DataArgs, eval: bool) -> Result<PathBuf> {
        let from_cfg = if eval {
            self.cfg.eval_dataset.as_ref().or(self.cfg.dataset.as_ref())
        } else {
            self.cfg.dataset.as_ref()
        };
        data.dataset
            .clone()
            .or_else(|| from_cfg.cloned())
            .ok_or_else(|| Error::config("no dataset given (config `dataset` or --dataset)"))
    }

    fn training_data(
        &self,
        data: &DataArgs,
        bench: Benchmark,
    ) -> Result<(Dataset, Vec<ParameterSample>)> {
        let ds = load_dataset(&self.dataset_path(data, false)?)?;
        if ds.benchmark != bench {
            return Err(Error::config(format!(
                "dataset holds {} samples but the run is configured for {}",
                ds.benchmark.name(),
                bench.name()
            )));
        }
        let n = self.cfg.n_train.unwrap_or(ds.len());
        if n > ds.len() {
            return Err(Error::config(format!(
                "n_train = {n} exceeds the {} samples in the dataset",
                ds.len()
            )));
        }
        let etas = (0..n).map(|i| ds.eta(i)).collect();
        Ok((ds, etas))
    }

    fn generate(&self, n: usize) -> Result<()> {
        let bench = self
            .cli
            .benchmark
            .or(self.cfg.train.as_ref().map(|t| t.benchmark))
            .ok_or_else(|| Error::config("generate needs --benchmark"))?;
        let seed = self
            .cli
            .seed
            .or(self.cfg.train.as_ref().map(|t| t.seed))
            .unwrap_or(0);
        let settings = SolverSettings::default();
        let (ds, report) = Dataset::generate(bench, n, seed, &settings, Execution::available())?;
        self.write(&format!("{}.lfrd", bench.name()), &ds.to_bytes())?;
        self.manifest(
            &format!("{}.manifest.json", bench.name()),
            "generate",
            json!({ "generation": report, "lattice": { "nx": ds.lattice.x.len(), "nt": ds.lattice.t.len() } }),
        )
    }

    fn pretrain_run(
        &self,
        data: &DataArgs,
        resume: Option<&Path>,
        freq_error: bool,
    ) -> Result<(
        TrainConfig,
        crate::training::PretrainOutcome,
        Option<FrequencyErrorObserver>,
    )> {
        let mut cfg = self.train_cfg("pretrain")?;
        if let Some(e) = self.cli.epochs {
            cfg.epochs_pretrain = e;
            cfg.validate()?;
        }
        let (ds, etas) = self.training_data(data, cfg.benchmark)?;
        let resume = match resume {
            Some(p) => Some(Checkpoint::from_file(&load_param_file(p)?)?),
            None => None,
        };
        let freq = freq_error.then(|| {
            FrequencyErrorObserver::new(
                etas[0].clone(),
                ds.lattice.clone(),
                &ds.samples[0].field,
                cfg.activation,
                self.cfg.reports.freq_error_every,
            )
        });
        let mut obs = CliObserver {
            freq,
            out: self.out(),
            quiet: self.cli.quiet,
        };
        self.say(format_args!(
            "pretrain {} ({}): {} samples × {} epochs",
            cfg.benchmark.name(),
            cfg.mode.name(),
            etas.len(),
            cfg.epochs_pretrain
        ));
        let outcome = match pretrain(&cfg, &etas, resume, &mut obs) {
            Ok(o) => o,
            Err(TrainError::Diverged {
                step,
                loss,
                last_good,
            }) => {
                if let Some(c) = &last_good {
                    self.write("last_good.lfrp", &c.to_file().to_bytes())?;
                }
                return Err(TrainError::Diverged {
                    step,
                    loss,
                    last_good,
                }
                .into());
            }
            Err(e) => return Err(e.into()),
        };
        Ok((cfg, outcome, obs.freq))
    }

    fn pretrain(&self, data: &DataArgs, resume: Option<&Path>) -> Result<()> {
        let reports = &self.cfg.reports;
        let (cfg, outcome, freq) = self.pretrain_run(data, resume, reports.freq_error)?;
        self.write("checkpoint.lfrp", &outcome.checkpoint.to_file().to_bytes())?;
        if reports.history {
            self.write("history.csv", &history_bytes(&outcome.history))?;
        }
        if let Some(f) = freq {
            self.write("freq_error.csv", &csv_bytes(|b| f.trace.write_csv(b)))?;
        }
        let last = outcome.history.last().map(|r| r.loss);
        self.say(format_args!("final loss {}", last.unwrap_or(f64::NAN)));
        self.manifest(
            "pretrain.manifest.json",
            "pretrain",
            json!({ "config": cfg, "steps": outcome.history.len(), "final_loss": last }),
        )
    }

    fn finetune(&self, data: &DataArgs, ckpt_path: &Path, index: usize) -> Result<()> {
        let mut cfg = self.train_cfg("finetune")?;
        if let Some(e) = self.cli.epochs {
            cfg.epochs_finetune = e;
        }
        let ckpt = Checkpoint::from_file(&load_param_file(ckpt_path)?)?;
        if ckpt.activation != cfg.activation {
            return Err(Error::config(
                "checkpoint activation differs from the configured one",
            ));
        }
        let ds = load_dataset(&self.dataset_path(data, true)?)?;
        if index >= ds.len() {
            return Err(Error::config(format!(
                "eta index {index} outside dataset of {}",
                ds.len()
            )));
        }
        let eta = ds.eta(index);
        let truth = &ds.samples[index].field;
        let l2 = |w: &MainNetWeights| -> Result<f64> {
            let pred = predict_field(w, cfg.activation, &ds.lattice)?;
            Ok(relative_l2(
                pred.as_slice().expect("standard layout"),
                truth.as_slice().expect("standard layout"),
            )?)
        };
        let zero_shot = l2(&ckpt.params.generate_weights(&eta)?)?;
        self.say(format_args!(
            "finetune sample {index} for {} epochs (zero-shot rel. L2 {zero_shot:.4e})",
            cfg.epochs_finetune
        ));
        let (weights, history) = finetune(&cfg, &ckpt.params, &eta, cfg.epochs_finetune)?;
        let final_l2 = l2(&weights)?;
        self.say(format_args!("fine-tuned rel. L2 {final_l2:.4e}"));
        self.write(
            "finetuned.lfrp",
            &weights_to_file(&weights, cfg.activation).to_bytes(),
        )?;
        if self.cfg.reports.history {
            self.write("finetune_history.csv", &history_bytes(&history))?;
        }
        if self.cfg.reports.spectrum {
            self.write(
                "spectrum.csv",
                &csv_bytes(|b| weight_spectrum_report(b, &weights)),
            )?;
        }
        self.manifest(
            "finetune.manifest.json",
            "finetune",
            json!({
                "config": cfg,
                "eta_index": index,
                "epochs": cfg.epochs_finetune,
                "zero_shot_relative_l2": zero_shot,
                "relative_l2": final_l2,
            }),
        )
    }

    fn evaluate(&self, data: &DataArgs, ckpt_path: &Path, split: &str) -> Result<()> {
        let model = Model::load(ckpt_path)?;
        let ds = load_dataset(&self.dataset_path(data, true)?)?;
        let indices = parse_split(split, ds.len())?;
        let errs = evaluate(
            &ds,
            &indices,
            model.activation(),
            Execution::available(),
            |eta| {
                model.weights_for(eta).map_err(|e| match e {
                    Error::Numerical(m) => crate::analysis::AnalysisError::UndefinedMetric(m),
                    e => crate::analysis::AnalysisError::Config(e.to_string()),
                })
            },
        )?;
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        self.say(format_args!(
            "mean rel. L2 {mean:.4e} over {} samples",
            errs.len()
        ));
        let per_sample: Vec<Value> = indices
            .iter()
            .zip(&errs)
            .map(|(i, e)| json!({ "index": i, "relative_l2": e }))
            .collect();
        self.write(
            "metrics.json",
            &json_bytes(&json!({
                "benchmark": ds.benchmark,
                "split": split,
                "per_sample": per_sample,
                "mean_relative_l2": mean,
            })),
        )
        .map(|_| ())
    }

    fn analyze(&self, a: &AnalyzeArgs) -> Result<()> {
        match a.kind.as_str() {
            "spectrum" => self.analyze_spectrum(a),
            "freq-error" => self.analyze_freq_error(a),
            "theorem1" => self.analyze_theorem1(a),
            "theorem2" => self.analyze_theorem2(a),
            "params" => self.analyze_params(),
            "continuity" => self.analyze_continuity(),
            "ablation" => self.analyze_ablation(a),
            k => Err(Error::config(format!(
                "unknown analysis kind `{k}` (expected spectrum, freq-error, theorem1, theorem2, params, continuity or ablation)"
            ))),
        }
    }

    /// Main-network weights from `--checkpoint`, generating them for the
    /// chosen sample when the file is a pre-trained checkpoint.
    fn analysis_weights(&self, a: &AnalyzeArgs, path: &Path) -> Result<MainNetWeights> {
        match Model::load(path)? {
            Model::Main(w, _) => Ok(w),
            m @ Model::Hyper(_) => {
                let ds = load_dataset(&self.dataset_path(&a.data, true)?)?;
                if a.eta_index >= ds.len() {
                    return Err(Error::config(format!(
                        "eta index {} outside dataset of {}",
                        a.eta_index,
                        ds.len()
                    )));
                }
                m.weights_for(&ds.eta(a.eta_index))
            }
        }
    }

    fn analyze_spectrum(&self, a: &AnalyzeArgs) -> Result<()> {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::config("spectrum needs --checkpoint"))?;
        let w = self.analysis_weights(a, path)?;
        self.write(
            "spectrum.csv",
            &csv_bytes(|b| weight_spectrum_report(b, &w)),
        )
        .map(|_| ())
    }

    fn analyze_freq_error(&self, a: &AnalyzeArgs) -> Result<()> {
        let (cfg, outcome, freq) = self.pretrain_run(&a.data, None, true)?;
        let freq = freq.expect("requested");
        self.write("freq_error.csv", &csv_bytes(|b| freq.trace.write_csv(b)))?;
        self.write("history.csv", &history_bytes(&outcome.history))?;
        self.manifest(
            "freq_error.manifest.json",
            "analyze freq-error",
            json!({ "config": cfg, "every": self.cfg.reports.freq_error_every, "snapshots": freq.trace.steps.len() }),
        )
    }

    fn analyze_theorem1(&self, a: &AnalyzeArgs) -> Result<()> {
        let weights = match &a.checkpoint {
            Some(p) => self.analysis_weights(a, p)?,
            None => {
                let cfg = self.train_cfg("theorem1 without --checkpoint")?;
                MainNetWeights::init(&cfg.arch, &mut SeedTree::new(cfg.seed).stream("init", 0))
            }
        };
        let rel_eps = [0.0, 1e-9, 1e-6, 1e-3, 1e-1];
        let mut layers = Vec::new();
        for (i, layer) in weights.layers.iter().enumerate() {
            let w = layer.to_flat();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let reports = rel_eps
                .iter()
                .map(|&r| {
                    let rep = verify_theorem1(&w, r * norm)?;
                    Ok(json!({ "relative_eps": r, "eps": rep.eps, "p_min": rep.p_min, "error": rep.error }))
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(json!({ "layer": i, "n": w.len(), "reports": reports }));
        }
        self.write("theorem1.json", &json_bytes(&json!({ "layers": layers })))
            .map(|_| ())
    }

    fn analyze_theorem2(&self, a: &AnalyzeArgs) -> Result<()> {
        let seed = self.cli.seed.unwrap_or(0);
        let s = theorem2_sweep(
            a.instances,
            a.d,
            a.m,
            a.eps,
            a.alpha_scale,
            seed,
            Execution::available(),
        )?;
        self.say(format_args!(
            "theorem 2: {} hold, {} fail, {} skipped of {}",
            s.holds, s.fails, s.skipped, s.instances
        ));
        self.write(
            "theorem2.json",
            &json_bytes(&json!({ "seed": seed, "summary": s })),
        )
        .map(|_| ())
    }

    fn analyze_params(&self) -> Result<()> {
        let cfg = self.train_cfg("params")?;
        let rows = [
            HyperMode::FourierReduced,
            HyperMode::FullSpectrum,
            HyperMode::SingleHyper,
        ]
        .into_iter()
        .map(|mode| parameter_count(&cfg.arch, &cfg.codec, &cfg.hyper, DEFAULT_SENSORS, mode))
        .collect::<std::result::Result<Vec<_>, _>>()?;
        let ratio = rows[0].ratio;
        self.say(format_args!(
            "{}: fourier_reduced / full_spectrum = {ratio:.4}",
            cfg.benchmark.name()
        ));
        self.write(
            "params.json",
            &json_bytes(&json!({
                "benchmark": cfg.benchmark,
                "arch": cfg.arch,
                "codec": cfg.codec,
                "sensors": DEFAULT_SENSORS,
                "counts": rows,
                "reduced_to_full_ratio": ratio,
            })),
        )
        .map(|_| ())
    }

    fn analyze_continuity(&self) -> Result<()> {
        let mut cfg = self.cfg.continuity.clone();
        if let Some(e) = self.cli.epochs {
            cfg.epochs = e;
        }
        let report = continuity_study(&cfg, Execution::available())?;
        self.say(format_args!(
            "continuity: ordering holds on {} of {} layers",
            report.ordered_layers,
            report.distances.first().map_or(0, Vec::len)
        ));
        self.write("continuity.csv", &csv_bytes(|b| report.write_csv(b)))?;
        self.write(
            "continuity.json",
            &json_bytes(&json!({ "config": cfg, "report": report })),
        )
        .map(|_| ())
    }

    fn analyze_ablation(&self, a: &AnalyzeArgs) -> Result<()> {
        let mut base = self.train_cfg("ablation")?;
        if let Some(e) = self.cli.epochs {
            base.epochs_pretrain = e;
            base.validate()?;
        }
        let (_, etas) = self.training_data(&a.data, base.benchmark)?;
        let variants: Vec<(String, TrainConfig)> = self
            .cfg
            .ablation
            .modes
            .iter()
            .map(|&mode| {
                (
                    mode.name().to_string(),
                    TrainConfig {
                        mode,
                        ..base.clone()
                    },
                )
            })
            .collect();
        let runs = run_ablation(&variants, &etas, Execution::available())?;
        let summary: Vec<Value> = runs
            .iter()
            .map(|r| {
                json!({
                    "label": r.label,
                    "trainable_params": r.trainable_params,
                    "initial_loss": r.initial_loss,
                    "final_loss": r.final_loss,
                    "ratio": r.final_loss / r.initial_loss,
                })
            })
            .collect();
        for s in &summary {
            self.say(format_args!(
                "{}: final/initial loss {:.3}",
                s["label"].as_str().unwrap_or(""),
                s["ratio"].as_f64().unwrap_or(f64::NAN)
            ));
        }
        self.write("ablation.csv", &csv_bytes(|b| write_ablation_csv(b, &runs)))?;
        self.write(
            "ablation.json",
            &json_bytes(&json!({ "config": base, "runs": summary })),
        )
        .map(|_| ())
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// `all` or `a..b` (half-open) over a dataset of `n` samples.
pub fn parse_split(split: &str, n: usize) -> Result<Vec<usize>> {
    if split == "all" {
        return Ok((0..n).collect());
    }
    let bad = || Error::config(format!("split `{split}` is not `all` or `a..b`"));
    let (a, b) = split.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a >= b || b > n {
        return Err(Error::config(format!(
            "split {a}..{b} is empty or exceeds the {n} samples"
        )));
    }
    Ok((a..b).collect())
}
