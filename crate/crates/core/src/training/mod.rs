//! Pre-training of the hypernetworks over many `η`, and full fine-tuning of
//! the generated main network on a single new `η`.
//!
//! An epoch is one pass over the training samples with one Adam step per
//! sample. Collocation points for global step `n` come from the stream
//! `("collocation", n)`, so a resumed run replays exactly.

pub mod checkpoint;
pub mod optim;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape};
use crate::hypernet::{
    HyperConfig, HyperError, HyperMode, HyperNetParams, ParameterSample, SpectralCodecConfig,
};
use crate::nets::{Activation, Architecture, MainNetWeights, NetError, TapedNet};
use crate::physics::{
    taped_loss, Benchmark, CollocationBatch, CollocationCounts, LossComponents, PdeProblem,
    PhysicsError,
};
use crate::rng::SeedTree;

pub use checkpoint::{
    weights_from_file, weights_to_file, write_history_csv, Checkpoint, HistoryRow, ParamFile,
};
pub use optim::{clip_global_norm, lr_schedule, Adam, DecayUnit, Schedule};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step} (loss {loss:e}); last good checkpoint after epoch {}", last_good.as_ref().map_or(0, |c| c.epoch))]
    Diverged {
        step: u64,
        loss: f64,
        last_good: Option<Box<Checkpoint>>,
    },
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Hyper(#[from] HyperError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn one() -> f64 {
    1.0
}

fn default_clip() -> f64 {
    10.0
}

fn default_finetune_lr() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub benchmark: Benchmark,
    #[serde(default)]
    pub mode: HyperMode,
    #[serde(default)]
    pub activation: Activation,
    pub arch: Architecture,
    #[serde(default)]
    pub hyper: HyperConfig,
    pub codec: SpectralCodecConfig,
    pub epochs_pretrain: usize,
    #[serde(default)]
    pub epochs_finetune: usize,
    pub schedule: Schedule,
    #[serde(default = "default_finetune_lr")]
    pub lr_finetune: f64,
    #[serde(default)]
    pub collocation: CollocationCounts,
    #[serde(default = "one")]
    pub lambda_bc: f64,
    #[serde(default = "one")]
    pub lambda_ic: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub clip_disabled: bool,
    /// Checkpoint cadence in epochs; 0 disables intermediate checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-size settings of each benchmark.
    pub fn preset(bench: Benchmark) -> Self {
        let epoch_decay = |lr0, decay_factor| Schedule {
            lr0,
            decay_factor,
            decay_interval: 50,
            decay_unit: DecayUnit::Epoch,
            decay_horizon: Some(300),
        };
        let (width, codec, schedule, epochs_pretrain) = match bench {
            Benchmark::Antiderivative => (
                64,
                SpectralCodecConfig {
                    p_input: 32,
                    p_hidden: 2048,
                    p_output: 16,
                },
                Schedule {
                    lr0: 5e-4,
                    decay_factor: 0.8,
                    decay_interval: 100,
                    decay_unit: DecayUnit::Step,
                    decay_horizon: None,
                },
                500,
            ),
            Benchmark::Advection => (
                128,
                SpectralCodecConfig {
                    p_input: 32,
                    p_hidden: 2048,
                    p_output: 16,
                },
                epoch_decay(5e-4, 0.8),
                1000,
            ),
            Benchmark::Burgers => (
                128,
                SpectralCodecConfig {
                    p_input: 64,
                    p_hidden: 2048,
                    p_output: 32,
                },
                epoch_decay(5e-4, 0.7),
                500,
            ),
            Benchmark::Diffusion => (
                128,
                SpectralCodecConfig {
                    p_input: 64,
                    p_hidden: 2048,
                    p_output: 32,
                },
                epoch_decay(1e-3, 0.5),
                1000,
            ),
        };
        Self {
            benchmark: bench,
            mode: HyperMode::FourierReduced,
            activation: Activation::Gelu,
            arch: Architecture::new(bench.input_dim(), width, 4),
            hyper: HyperConfig::default(),
            codec,
            epochs_pretrain,
            epochs_finetune: 300,
            schedule,
            lr_finetune: default_finetune_lr(),
            collocation: CollocationCounts::default(),
            lambda_bc: 1.0,
            lambda_ic: 1.0,
            clip_norm: default_clip(),
            clip_disabled: false,
            checkpoint_every: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.arch.validate()?;
        if self.arch.input_dim != self.benchmark.input_dim() || self.arch.output_dim != 1 {
            return Err(TrainError::Config(format!(
                "{} needs a {} → 1 network, got {} → {}",
                self.benchmark.name(),
                self.benchmark.input_dim(),
                self.arch.input_dim,
                self.arch.output_dim
            )));
        }
        self.codec.truncations(&self.arch)?;
        self.schedule.validate()?;
        if self.epochs_pretrain == 0 {
            return Err(TrainError::Config(
                "epochs_pretrain must be at least 1".into(),
            ));
        }
        if !(self.lr_finetune > 0.0) {
            return Err(TrainError::Config("lr_finetune must be positive".into()));
        }
        if !(self.lambda_bc >= 0.0 && self.lambda_ic >= 0.0) {
            return Err(TrainError::Config(
                "loss weights must be nonnegative".into(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        let c = self.collocation;
        if c.m_r == 0 || (self.benchmark.is_time_dependent() && (c.m_bc == 0 || c.m_ic == 0)) {
            return Err(TrainError::Config(
                "collocation counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn problem(&self) -> PdeProblem {
        PdeProblem::new(self.benchmark)
    }

    fn batch(&self, stream: &str, step: u64) -> Result<CollocationBatch, TrainError> {
        let mut rng = SeedTree::new(self.seed).stream(stream, step);
        Ok(CollocationBatch::sample(
            self.benchmark,
            self.collocation,
            self.lambda_bc,
            self.lambda_ic,
            &mut rng,
        )?)
    }

    fn clip(&self, grads: &mut [Array2<f64>]) {
        if !self.clip_disabled {
            clip_global_norm(grads, self.clip_norm);
        }
    }

    /// Fresh hypernetwork parameters from the `init` stream.
    pub fn init_params(&self, m: usize) -> Result<HyperNetParams, TrainError> {
        self.validate()?;
        let mut rng = SeedTree::new(self.seed).stream("init", 0);
        Ok(HyperNetParams::init(
            self.mode, self.arch, self.codec, self.hyper, m, &mut rng,
        )?)
    }

    fn check_compatible(&self, p: &HyperNetParams) -> Result<(), TrainError> {
        if p.mode != self.mode
            || p.arch != self.arch
            || p.truncations != self.codec.truncations(&self.arch)?
        {
            return Err(TrainError::Config(
                "checkpoint does not match the configured architecture".into(),
            ));
        }
        Ok(())
    }
}

/// Callbacks during training.
pub trait TrainObserver {
    fn checkpoint(&mut self, _ckpt: &Checkpoint) -> Result<(), TrainError> {
        Ok(())
    }

    /// Called after every optimizer step with the updated parameters.
    fn after_step(&mut self, _step: u64, _params: &HyperNetParams) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
}

fn check_loss(
    step: u64,
    c: &LossComponents,
    last_good: &Option<Checkpoint>,
) -> Result<(), TrainError> {
    let loss = c.total();
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(TrainError::Diverged {
            step,
            loss,
            last_good: last_good.clone().map(Box::new),
        });
    }
    Ok(())
}

fn divergence_from(err: TrainError, step: u64, last_good: &Option<Checkpoint>) -> TrainError {
    match err {
        TrainError::Autodiff(AdError::NonFinite { .. }) | TrainError::NonFinite(_) => {
            TrainError::Diverged {
                step,
                loss: f64::NAN,
                last_good: last_good.clone().map(Box::new),
            }
        }
        e => e,
    }
}

/// Loss and parameter gradient of the hypernetworks on one sample.
pub fn hyper_loss_and_grad(
    cfg: &TrainConfig,
    params: &HyperNetParams,
    eta: &ParameterSample,
    batch: &CollocationBatch,
) -> Result<(LossComponents, Vec<Array2<f64>>), TrainError> {
    let tape = Tape::new();
    let placed = params.place(&tape);
    let net = placed.generate(eta, cfg.activation)?;
    let loss = taped_loss(&cfg.problem(), &net, eta, batch)?;
    let grads = tape.gradient(loss.total, &placed.vars())?;
    Ok((loss.components(), grads))
}

/// Pre-trains on `etas`, from scratch or from `resume`.
pub fn pretrain(
    cfg: &TrainConfig,
    etas: &[ParameterSample],
    resume: Option<Checkpoint>,
    observer: &mut dyn TrainObserver,
) -> Result<PretrainOutcome, TrainError> {
    cfg.validate()?;
    let first = etas
        .first()
        .ok_or_else(|| TrainError::Config("no training samples".into()))?;
    let m = first.m();
    if etas.iter().any(|e| e.m() != m) {
        return Err(TrainError::Config(
            "training samples have different sensor counts".into(),
        ));
    }
    let mut state = match resume {
        Some(c) => {
            cfg.check_compatible(&c.params)?;
            if c.params.input_dim() != m {
                return Err(TrainError::Config(format!(
                    "checkpoint expects {} sensors, samples have {m}",
                    c.params.input_dim()
                )));
            }
            c
        }
        None => {
            let params = cfg.init_params(m)?;
            let adam = Adam::new(&tensors_of(&params));
            Checkpoint {
                params,
                adam,
                epoch: 0,
                activation: cfg.activation,
            }
        }
    };
    let per_epoch = etas.len();
    let mut history = Vec::new();
    let mut last_good = Some(state.clone());
    let mut values = tensors_of(&state.params);
    while state.epoch < cfg.epochs_pretrain {
        for (i, eta) in etas.iter().enumerate() {
            let step = (state.epoch * per_epoch + i) as u64;
            let lr = lr_schedule(step, per_epoch, &cfg.schedule);
            let batch = cfg.batch("collocation", step)?;
            let (loss, mut grads) = hyper_loss_and_grad(cfg, &state.params, eta, &batch)
                .map_err(|e| divergence_from(e, step, &last_good))?;
            check_loss(step, &loss, &last_good)?;
            cfg.clip(&mut grads);
            state
                .adam
                .update(&mut values, &grads, lr)
                .map_err(|e| divergence_from(e, step, &last_good))?;
            set_tensors(&mut state.params, &values)?;
            history.push(HistoryRow {
                step,
                lr,
                loss: loss.total(),
                loss_r: loss.residual,
                loss_bc: loss.bc,
                loss_ic: loss.ic,
            });
            observer.after_step(step, &state.params)?;
        }
        state.epoch += 1;
        if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
            observer.checkpoint(&state)?;
            last_good = Some(state.clone());
        }
    }
    Ok(PretrainOutcome {
        checkpoint: state,
        history,
    })
}

fn tensors_of(p: &HyperNetParams) -> Vec<Array2<f64>> {
    p.to_tensors().iter().map(|(_, v)| v.clone()).collect()
}

fn set_tensors(p: &mut HyperNetParams, values: &[Array2<f64>]) -> Result<(), TrainError> {
    let mut t = crate::tensors::NamedTensors::default();
    for ((name, _), v) in p.to_tensors().iter().zip(values) {
        t.push(name, v.clone());
    }
    p.load_tensors(&t)?;
    Ok(())
}

fn main_tensors(w: &MainNetWeights) -> Vec<Array2<f64>> {
    w.layers
        .iter()
        .flat_map(|l| {
            std::iter::once(l.w.clone())
                .chain(l.b.iter().map(|b| b.clone().insert_axis(ndarray::Axis(1))))
        })
        .collect()
}

fn set_main_tensors(w: &mut MainNetWeights, values: &[Array2<f64>]) {
    let mut it = values.iter();
    for l in &mut w.layers {
        l.w.assign(it.next().expect("counted"));
        if let Some(b) = &mut l.b {
            b.assign(&it.next().expect("counted").column(0));
        }
    }
}

/// Loss and gradient of a main network with its weights as the variables.
pub fn main_loss_and_grad(
    problem: &PdeProblem,
    weights: &MainNetWeights,
    act: Activation,
    eta: &ParameterSample,
    batch: &CollocationBatch,
) -> Result<(LossComponents, Vec<Array2<f64>>), TrainError> {
    let tape = Tape::new();
    let net = TapedNet::from_weights(&tape, weights, act, true);
    let loss = taped_loss(problem, &net, eta, batch)?;
    let grads = tape.gradient(loss.total, &net.vars())?;
    Ok((loss.components(), grads))
}

/// Run length, rate and collocation stream of [`train_main_net`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MainNetRun<'a> {
    pub epochs: usize,
    pub lr: f64,
    pub stream: &'a str,
    /// Stop after the first step whose loss is at or below this value.
    pub stop_below: Option<f64>,
}

/// Adam on main-network weights at a constant rate, one step per epoch.
pub fn train_main_net(
    problem: &PdeProblem,
    init: MainNetWeights,
    act: Activation,
    eta: &ParameterSample,
    cfg: &TrainConfig,
    run: MainNetRun<'_>,
) -> Result<(MainNetWeights, Vec<HistoryRow>), TrainError> {
    let mut weights = init;
    let mut values = main_tensors(&weights);
    let mut adam = Adam::new(&values);
    let mut history = Vec::with_capacity(run.epochs);
    for step in 0..run.epochs as u64 {
        let batch = cfg.batch(run.stream, step)?;
        let (loss, mut grads) = main_loss_and_grad(problem, &weights, act, eta, &batch)
            .map_err(|e| divergence_from(e, step, &None))?;
        check_loss(step, &loss, &None)?;
        history.push(HistoryRow {
            step,
            lr: run.lr,
            loss: loss.total(),
            loss_r: loss.residual,
            loss_bc: loss.bc,
            loss_ic: loss.ic,
        });
        if run.stop_below.is_some_and(|t| loss.total() <= t) {
            break;
        }
        cfg.clip(&mut grads);
        adam.update(&mut values, &grads, run.lr)
            .map_err(|e| divergence_from(e, step, &None))?;
        set_main_tensors(&mut weights, &values);
    }
    Ok((weights, history))
}

/// Reconstructs the main network for `eta` from `params`, then optimizes
/// its weights directly for `epochs` steps.
pub fn finetune(
    cfg: &TrainConfig,
    params: &HyperNetParams,
    eta: &ParameterSample,
    epochs: usize,
) -> Result<(MainNetWeights, Vec<HistoryRow>), TrainError> {
    cfg.validate()?;
    cfg.check_compatible(params)?;
    let init = params.generate_weights(eta)?;
    train_main_net(
        &cfg.problem(),
        init,
        cfg.activation,
        eta,
        cfg,
        MainNetRun {
            epochs,
            lr: cfg.lr_finetune,
            stream: "finetune",
            stop_below: None,
        },
    )
}

/// Desk-sized variant of [`TrainConfig::preset`] used by tests and examples.
pub fn desk_config(
    bench: Benchmark,
    width: usize,
    codec: SpectralCodecConfig,
    epochs: usize,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        arch: Architecture::new(bench.input_dim(), width, 4),
        codec,
        epochs_pretrain: epochs,
        collocation: CollocationCounts {
            m_r: 128,
            m_bc: 32,
            m_ic: 32,
        },
        seed,
        ..TrainConfig::preset(bench)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::EtaGenerator;

    fn small_cfg(mode: HyperMode) -> TrainConfig {
        let mut cfg = desk_config(
            Benchmark::Antiderivative,
            8,
            SpectralCodecConfig {
                p_input: 8,
                p_hidden: 24,
                p_output: 4,
            },
            3,
            5,
        );
        cfg.mode = mode;
        cfg.arch.hidden_layers = 2;
        cfg.hyper.width = 16;
        cfg.collocation.m_r = 32;
        cfg.checkpoint_every = 1;
        cfg
    }

    fn etas(n: usize) -> Vec<ParameterSample> {
        let g = EtaGenerator::new(Benchmark::Antiderivative, 20).unwrap();
        (0..n)
            .map(|i| g.sample(&mut SeedTree::new(1).stream("data", i as u64)))
            .collect()
    }

    struct Collect(Vec<Checkpoint>);

    impl TrainObserver for Collect {
        fn checkpoint(&mut self, c: &Checkpoint) -> Result<(), TrainError> {
            self.0.push(c.clone());
            Ok(())
        }
    }

    #[test]
    fn presets_are_valid() {
        for b in Benchmark::ALL {
            TrainConfig::preset(b).validate().unwrap();
        }
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let cfg = small_cfg(HyperMode::FourierReduced);
        let a = pretrain(&cfg, &etas(3), None, &mut ()).unwrap();
        let b = pretrain(&cfg, &etas(3), None, &mut ()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.history.len(), 9);
    }

    #[test]
    fn resume_replays_the_remaining_steps() {
        let cfg = small_cfg(HyperMode::FourierReduced);
        let data = etas(3);
        let mut sink = Collect(Vec::new());
        let full = pretrain(&cfg, &data, None, &mut sink).unwrap();
        assert_eq!(sink.0.len(), 3);
        let ck = sink.0[0].clone();
        let bytes = ck.to_file().to_bytes();
        let loaded =
            Checkpoint::from_file(&ParamFile::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        let rest = pretrain(&cfg, &data, Some(loaded), &mut ()).unwrap();
        assert_eq!(rest.history[..], full.history[3..]);
        assert_eq!(rest.checkpoint, full.checkpoint);
    }

    #[test]
    fn trainable_count_matches_accounting() {
        let cfg = small_cfg(HyperMode::FourierReduced);
        let p = cfg.init_params(20).unwrap();
        let count =
            crate::hypernet::parameter_count(&cfg.arch, &cfg.codec, &cfg.hyper, 20, cfg.mode)
                .unwrap();
        assert_eq!(
            tensors_of(&p).iter().map(|t| t.len()).sum::<usize>(),
            count.hypernet_params
        );
    }

    #[test]
    fn zero_epoch_finetune_returns_reconstruction() {
        let cfg = small_cfg(HyperMode::FourierReduced);
        let data = etas(2);
        let out = pretrain(&cfg, &data, None, &mut ()).unwrap();
        let (w, hist) = finetune(&cfg, &out.checkpoint.params, &data[1], 0).unwrap();
        assert!(hist.is_empty());
        assert_eq!(w, out.checkpoint.params.generate_weights(&data[1]).unwrap());
    }

    #[test]
    fn divergence_is_reported_with_last_checkpoint() {
        let mut cfg = small_cfg(HyperMode::FullSpectrum);
        cfg.schedule.lr0 = 1e6;
        cfg.schedule.decay_factor = 1.0;
        cfg.clip_disabled = true;
        cfg.epochs_pretrain = 50;
        match pretrain(&cfg, &etas(2), None, &mut ()) {
            Err(TrainError::Diverged { last_good, .. }) => assert!(last_good.is_some()),
            other => panic!(
                "expected divergence, got {:?}",
                other.map(|o| o.history.len())
            ),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg(HyperMode::FourierReduced);
        cfg.schedule.decay_factor = 1.5;
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
        let mut cfg = small_cfg(HyperMode::FourierReduced);
        cfg.epochs_pretrain = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(HyperMode::FourierReduced);
        cfg.arch.input_dim = 2;
        assert!(cfg.validate().is_err());
    }
}
