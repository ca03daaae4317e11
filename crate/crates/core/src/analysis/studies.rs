//! Parameter-to-weight continuity study and hypernetwork ablations.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::hypernet::{parameter_count, ParameterSample};
use crate::nets::{Activation, Architecture, MainNetWeights};
use crate::par::{try_map_range, Execution};
use crate::physics::{Benchmark, CollocationCounts, PdeProblem};
use crate::problems::{evaluation_lattice, linspace, solve_burgers_reference, DEFAULT_SENSORS};
use crate::rng::SeedTree;
use crate::training::{pretrain, train_main_net, HistoryRow, MainNetRun, TrainConfig};

use super::{predict_field, relative_l2, AnalysisError};

fn default_x0() -> Vec<f64> {
    vec![0.4, 0.5, 2.0]
}

/// Standalone Burgers PINNs with Gaussian initial data `exp(−(x − x₀)²/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuityConfig {
    pub x0: Vec<f64>,
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    /// Training stops once the loss falls below this value.
    pub target_loss: f64,
    pub collocation: CollocationCounts,
    pub seed: u64,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            x0: default_x0(),
            width: 50,
            hidden_layers: 5,
            activation: Activation::Gelu,
            epochs: 2000,
            lr: 1e-3,
            target_loss: 1e-4,
            collocation: CollocationCounts {
                m_r: 256,
                m_bc: 64,
                m_ic: 64,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityCase {
    pub x0: f64,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub reached_target: bool,
    /// Against the pseudo-spectral solution on the evaluation lattice.
    pub relative_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub cases: Vec<ContinuityCase>,
    /// `distances[p][l]` is the L1 distance of layer `l` between cases `p`
    /// and `p + 1`.
    pub distances: Vec<Vec<f64>>,
    /// Layers where the first distance is below the second.
    pub ordered_layers: usize,
    pub majority_ordered: bool,
    #[serde(skip)]
    pub weights: Vec<MainNetWeights>,
}

impl ContinuityReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "layer")?;
        for p in 0..self.distances.len() {
            write!(out, ",d{}{}", p + 1, p + 2)?;
        }
        writeln!(out)?;
        let layers = self.distances.first().map_or(0, Vec::len);
        for l in 0..layers {
            write!(out, "{l}")?;
            for d in &self.distances {
                write!(out, ",{}", d[l])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `Σ |a − b|` per layer over weights and bias.
pub fn layer_l1_distances(
    a: &MainNetWeights,
    b: &MainNetWeights,
) -> Result<Vec<f64>, AnalysisError> {
    if a.layers.len() != b.layers.len() {
        return Err(AnalysisError::Shape(
            "networks have different depths".into(),
        ));
    }
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(la, lb)| {
            let (fa, fb) = (la.to_flat(), lb.to_flat());
            if fa.len() != fb.len() {
                return Err(AnalysisError::Shape("layers have different sizes".into()));
            }
            Ok(fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum())
        })
        .collect()
}

fn gaussian_eta(x0: f64) -> ParameterSample {
    let sensors = linspace(DEFAULT_SENSORS);
    let values = sensors
        .iter()
        .map(|&x| (-(x - x0) * (x - x0) / 2.0).exp())
        .collect();
    ParameterSample { values, sensors }
}

/// Trains one PINN per `x₀` from a shared initialization.
pub fn continuity_study(
    cfg: &ContinuityConfig,
    exec: Execution,
) -> Result<ContinuityReport, AnalysisError> {
    if cfg.x0.len() < 2 {
        return Err(AnalysisError::Config("need at least two x0 values".into()));
    }
    let arch = Architecture::new(2, cfg.width, cfg.hidden_layers);
    arch.validate()?;
    if cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(AnalysisError::Config(
            "epochs and lr must be positive".into(),
        ));
    }
    let init = MainNetWeights::init(&arch, &mut SeedTree::new(cfg.seed).stream("init", 0));
    let train_cfg = TrainConfig {
        collocation: cfg.collocation,
        seed: cfg.seed,
        activation: cfg.activation,
        ..TrainConfig::preset(Benchmark::Burgers)
    };
    let problem = PdeProblem::new(Benchmark::Burgers);
    let lattice = evaluation_lattice(Benchmark::Burgers);
    let runs = try_map_range(exec, cfg.x0.len(), |i| {
        let x0 = cfg.x0[i];
        let eta = gaussian_eta(x0);
        let (w, hist) = train_main_net(
            &problem,
            init.clone(),
            cfg.activation,
            &eta,
            &train_cfg,
            MainNetRun {
                epochs: cfg.epochs,
                lr: cfg.lr,
                stream: "collocation",
                stop_below: Some(cfg.target_loss),
            },
        )?;
        let truth = solve_burgers_reference(
            |x| (-(x - x0) * (x - x0) / 2.0).exp(),
            problem.nu,
            256,
            &lattice,
        )?;
        let pred = predict_field(&w, cfg.activation, &lattice)?;
        let rel = relative_l2(
            pred.as_slice().expect("standard layout"),
            truth.values.as_slice().expect("standard layout"),
        )?;
        let final_loss = hist.last().map_or(f64::NAN, |r| r.loss);
        let case = ContinuityCase {
            x0,
            epochs_run: hist.len(),
            final_loss,
            reached_target: final_loss <= cfg.target_loss,
            relative_l2: rel,
        };
        Ok::<_, AnalysisError>((case, w))
    })?;
    let (cases, weights): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let distances = weights
        .windows(2)
        .map(|p| layer_l1_distances(&p[0], &p[1]))
        .collect::<Result<Vec<_>, _>>()?;
    let (ordered_layers, majority_ordered) = if distances.len() >= 2 {
        let n = distances[0]
            .iter()
            .zip(&distances[1])
            .filter(|(a, b)| a < b)
            .count();
        (n, 2 * n > distances[0].len())
    } else {
        (0, false)
    };
    Ok(ContinuityReport {
        cases,
        distances,
        ordered_layers,
        majority_ordered,
        weights,
    })
}

/// One pre-training run of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub label: String,
    pub trainable_params: usize,
    /// Mean loss over the first and last epoch.
    pub initial_loss: f64,
    pub final_loss: f64,
    #[serde(skip)]
    pub history: Vec<HistoryRow>,
}

/// Pre-trains every variant on the same samples.
pub fn run_ablation(
    variants: &[(String, TrainConfig)],
    etas: &[ParameterSample],
    exec: Execution,
) -> Result<Vec<AblationRun>, AnalysisError> {
    let m = etas
        .first()
        .map(ParameterSample::m)
        .ok_or_else(|| AnalysisError::Config("no training samples".into()))?;
    try_map_range(exec, variants.len(), |i| {
        let (label, cfg) = &variants[i];
        let out = pretrain(cfg, etas, None, &mut ())?;
        let count = parameter_count(&cfg.arch, &cfg.codec, &cfg.hyper, m, cfg.mode)?;
        let per_epoch = etas.len();
        let mean =
            |rows: &[HistoryRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
        let h = &out.history;
        Ok(AblationRun {
            label: label.clone(),
            trainable_params: count.hypernet_params,
            initial_loss: mean(&h[..per_epoch]),
            final_loss: mean(&h[h.len() - per_epoch..]),
            history: out.history,
        })
    })
}

/// Long-format loss curves `label,step,loss,loss_r,loss_bc,loss_ic`.
pub fn write_ablation_csv<W: Write>(mut out: W, runs: &[AblationRun]) -> io::Result<()> {
    writeln!(out, "label,step,loss,loss_r,loss_bc,loss_ic")?;
    for r in runs {
        for h in &r.history {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.label, h.step, h.loss, h.loss_r, h.loss_bc, h.loss_ic
            )?;
        }
    }
    Ok(())
}

/// Mean of consecutive windows of `window` rows; a partial tail is dropped.
pub fn window_means(history: &[HistoryRow], window: usize) -> Vec<f64> {
    history
        .chunks_exact(window.max(1))
        .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypernet::{HyperMode, SpectralCodecConfig};
    use crate::nets::LayerWeights;
    use crate::problems::EtaGenerator;
    use crate::training::desk_config;
    use ndarray::{array, Array1};

    #[test]
    fn l1_distance_matches_direct_sum() {
        let a = MainNetWeights {
            layers: vec![
                LayerWeights {
                    w: array![[1.0, -2.0]],
                    b: Some(Array1::from(vec![0.5])),
                },
                LayerWeights {
                    w: array![[3.0]],
                    b: None,
                },
            ],
        };
        let mut b = a.clone();
        b.layers[0].w[[0, 1]] = 1.0;
        b.layers[0].b = Some(Array1::from(vec![-0.5]));
        b.layers[1].w[[0, 0]] = 2.5;
        assert_eq!(layer_l1_distances(&a, &b).unwrap(), vec![3.0 + 1.0, 0.5]);
        assert_eq!(layer_l1_distances(&a, &a).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identical_cases_have_zero_distance() {
        let cfg = ContinuityConfig {
            x0: vec![0.5, 0.5],
            width: 6,
            hidden_layers: 2,
            epochs: 3,
            collocation: CollocationCounts {
                m_r: 16,
                m_bc: 4,
                m_ic: 4,
            },
            ..ContinuityConfig::default()
        };
        let r = continuity_study(&cfg, Execution::available()).unwrap();
        assert!(r.distances[0].iter().all(|&d| d == 0.0));
        assert_eq!(r.cases[0], r.cases[1]);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("layer,d12\n0,0\n"));
    }

    #[test]
    fn ablation_runs_and_writes_curves() {
        let g = EtaGenerator::new(Benchmark::Antiderivative, 20).unwrap();
        let etas: Vec<_> = (0..2)
            .map(|i| g.sample(&mut SeedTree::new(1).stream("data", i)))
            .collect();
        let base = desk_config(
            Benchmark::Antiderivative,
            6,
            SpectralCodecConfig {
                p_input: 4,
                p_hidden: 12,
                p_output: 3,
            },
            2,
            3,
        );
        let base = TrainConfig {
            collocation: CollocationCounts {
                m_r: 16,
                m_bc: 1,
                m_ic: 1,
            },
            ..base
        };
        let variants: Vec<(String, TrainConfig)> =
            [HyperMode::FourierReduced, HyperMode::SingleHyper]
                .into_iter()
                .map(|mode| {
                    (
                        mode.name().to_string(),
                        TrainConfig {
                            mode,
                            ..base.clone()
                        },
                    )
                })
                .collect();
        let runs = run_ablation(&variants, &etas, Execution::Sequential).unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs
            .iter()
            .all(|r| r.history.len() == 4 && r.initial_loss.is_finite()));
        let mut csv = Vec::new();
        write_ablation_csv(&mut csv, &runs).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
    }

    #[test]
    fn window_means_drop_partial_tail() {
        let rows: Vec<HistoryRow> = (0..5)
            .map(|i| HistoryRow {
                step: i,
                lr: 0.0,
                loss: i as f64,
                loss_r: 0.0,
                loss_bc: 0.0,
                loss_ic: 0.0,
            })
            .collect();
        assert_eq!(window_means(&rows, 2), vec![0.5, 2.5]);
    }
}
