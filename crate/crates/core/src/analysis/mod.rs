//! Metrics, spectral reports and verification harnesses.

pub mod studies;
pub mod theorems;

use std::io::{self, Write};

use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;

use crate::hypernet::codec::{dft, write_spectrum_csv, WeightSpectrum};
use crate::hypernet::{HyperError, HyperNetParams, ParameterSample};
use crate::nets::{forward_batch, Activation, MainNetWeights, NetError};
use crate::par::{try_map_range, Execution};
use crate::problems::{Dataset, Lattice, ProblemError};
use crate::training::{TrainError, TrainObserver};

pub use studies::{
    continuity_study, layer_l1_distances, run_ablation, window_means, write_ablation_csv,
    AblationRun, ContinuityConfig, ContinuityReport,
};
pub use theorems::{
    theorem2_sweep, verify_theorem1, verify_theorem2, Theorem1Report, Theorem2Instance,
    Theorem2Outcome, Theorem2Summary,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Hyper(#[from] HyperError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// `‖pred − truth‖₂ / ‖truth‖₂` over all entries.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64, AnalysisError> {
    if pred.len() != truth.len() {
        return Err(AnalysisError::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let den = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(den > 0.0) {
        return Err(AnalysisError::UndefinedMetric(
            "reference field has zero norm".into(),
        ));
    }
    let num = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Relative tolerance below which a truth coefficient counts as zero.
const SPECTRUM_MASK: f64 = 1e-12;

/// Frequencies with a nonzero truth coefficient, `0..=n/2`.
pub fn retained_frequencies(truth: &[f64]) -> Vec<usize> {
    let spec = dft(truth);
    let max = spec.iter().map(|c| c.norm()).fold(0.0, f64::max);
    (0..=truth.len() / 2)
        .filter(|&k| k < spec.len() && spec[k].norm() > SPECTRUM_MASK * max)
        .collect()
}

/// `Δ_k = |F[truth](k) − F[pred](k)| / |F[truth](k)|` at the retained
/// frequencies, returned as `(k, Δ_k)` pairs.
pub fn frequency_error(pred: &[f64], truth: &[f64]) -> Result<Vec<(usize, f64)>, AnalysisError> {
    if pred.len() != truth.len() {
        return Err(AnalysisError::Shape(format!(
            "signals of length {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let (fp, ft) = (dft(pred), dft(truth));
    Ok(retained_frequencies(truth)
        .into_iter()
        .map(|k| (k, (ft[k] - fp[k]).norm() / ft[k].norm()))
        .collect())
}

/// `Δ_k` snapshots taken during training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyErrorTrace {
    pub steps: Vec<u64>,
    pub k_values: Vec<usize>,
    /// `delta[s][j]` is `Δ_{k_values[j]}` at `steps[s]`.
    pub delta: Vec<Vec<f64>>,
}

impl FrequencyErrorTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,k,delta")?;
        for (s, row) in self.steps.iter().zip(&self.delta) {
            for (k, d) in self.k_values.iter().zip(row) {
                writeln!(out, "{s},{k},{d}")?;
            }
        }
        Ok(())
    }
}

/// Records `Δ_k` of the zero-shot prediction on one `η` every `every` steps.
pub struct FrequencyErrorObserver {
    eta: ParameterSample,
    lattice: Lattice,
    truth: Vec<f64>,
    activation: Activation,
    every: u64,
    pub trace: FrequencyErrorTrace,
}

impl FrequencyErrorObserver {
    /// `truth` is the reference field on `lattice`, `[t, x]` order.
    pub fn new(
        eta: ParameterSample,
        lattice: Lattice,
        truth: &Array2<f64>,
        activation: Activation,
        every: u64,
    ) -> Self {
        let truth: Vec<f64> = truth.iter().copied().collect();
        let k_values = retained_frequencies(&truth);
        Self {
            eta,
            lattice,
            truth,
            activation,
            every: every.max(1),
            trace: FrequencyErrorTrace {
                steps: Vec::new(),
                k_values,
                delta: Vec::new(),
            },
        }
    }
}

impl TrainObserver for FrequencyErrorObserver {
    fn after_step(&mut self, step: u64, params: &HyperNetParams) -> Result<(), TrainError> {
        if !step.is_multiple_of(self.every) {
            return Ok(());
        }
        let w = params.generate_weights(&self.eta)?;
        let pred: Vec<f64> = predict_field(&w, self.activation, &self.lattice)?
            .iter()
            .copied()
            .collect();
        let all =
            frequency_error(&pred, &self.truth).map_err(|e| TrainError::Config(e.to_string()))?;
        self.trace.steps.push(step);
        self.trace
            .delta
            .push(all.into_iter().map(|(_, d)| d).collect());
        Ok(())
    }
}

/// Main-network output on every lattice node, `[t, x]` order.
pub fn predict_field(
    weights: &MainNetWeights,
    act: Activation,
    lattice: &Lattice,
) -> Result<Array2<f64>, NetError> {
    let (nt, nx) = (lattice.t.len(), lattice.x.len());
    let dim = weights.input_dim();
    let mut pts = Array2::zeros((dim, nt * nx));
    for (it, &t) in lattice.t.iter().enumerate() {
        for (ix, &x) in lattice.x.iter().enumerate() {
            pts[[0, it * nx + ix]] = x;
            if dim > 1 {
                pts[[1, it * nx + ix]] = t;
            }
        }
    }
    let out = forward_batch(&pts, weights, act)?;
    Ok(Array2::from_shape_vec((nt, nx), out.row(0).to_vec()).expect("lattice size"))
}

/// Relative L2 of each listed dataset sample under weights from `weights_for`.
pub fn evaluate<F>(
    dataset: &Dataset,
    indices: &[usize],
    act: Activation,
    exec: Execution,
    weights_for: F,
) -> Result<Vec<f64>, AnalysisError>
where
    F: Fn(&ParameterSample) -> Result<MainNetWeights, AnalysisError> + Sync,
{
    try_map_range(exec, indices.len(), |j| {
        let i = indices[j];
        let sample = dataset.samples.get(i).ok_or_else(|| {
            AnalysisError::Config(format!("sample {i} outside dataset of {}", dataset.len()))
        })?;
        let w = weights_for(&dataset.eta(i))?;
        let pred = predict_field(&w, act, &dataset.lattice)?;
        relative_l2(
            pred.as_slice().expect("standard layout"),
            sample.field.as_slice().expect("standard layout"),
        )
    })
}

/// Full DFT of each layer's flattened weights (row-major, bias appended).
pub fn weight_spectra(weights: &MainNetWeights) -> Vec<WeightSpectrum> {
    weights
        .layers
        .iter()
        .map(|l| {
            let flat = l.to_flat();
            let spec: Vec<Complex64> = dft(&flat);
            WeightSpectrum {
                re: spec.iter().map(|c| c.re).collect(),
                im: spec.iter().map(|c| c.im).collect(),
                n_weights: flat.len(),
            }
        })
        .collect()
}

/// Per-layer spectrum CSV (`layer,k,re,im`).
pub fn weight_spectrum_report<W: Write>(out: W, weights: &MainNetWeights) -> io::Result<()> {
    write_spectrum_csv(out, &weight_spectra(weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Architecture, LayerWeights};
    use crate::rng::SeedTree;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn naive_dft(x: &[f64], k: usize) -> Complex64 {
        let n = x.len() as f64;
        x.iter()
            .enumerate()
            .map(|(j, &v)| Complex64::from_polar(v, -2.0 * PI * (k * j) as f64 / n))
            .sum()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeedTree::new(seed).stream("test", 0);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn relative_l2_examples() {
        let t = random(50, 1);
        assert_eq!(relative_l2(&t, &t).unwrap(), 0.0);
        let twice: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert!((relative_l2(&twice, &t).unwrap() - 1.0).abs() < 1e-15);
        let p = random(50, 2);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..50 {
            num += (p[i] - t[i]).powi(2);
            den += t[i].powi(2);
        }
        let expect = (num / den).sqrt();
        assert!((relative_l2(&p, &t).unwrap() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn zero_truth_is_undefined() {
        assert!(matches!(
            relative_l2(&[1.0, 2.0], &[0.0, 0.0]),
            Err(AnalysisError::UndefinedMetric(_))
        ));
        assert!(matches!(
            relative_l2(&[1.0], &[0.0, 0.0]),
            Err(AnalysisError::Shape(_))
        ));
    }

    #[test]
    fn frequency_error_examples() {
        let t = random(64, 3);
        assert!(frequency_error(&t, &t)
            .unwrap()
            .iter()
            .all(|&(_, d)| d == 0.0));
        let zero = vec![0.0; 64];
        let all = frequency_error(&zero, &t).unwrap();
        assert_eq!(all.len(), 33);
        assert!(all.iter().all(|&(_, d)| (d - 1.0).abs() < 1e-15));
    }

    #[test]
    fn frequency_error_matches_naive_dft() {
        let (p, t) = (random(37, 4), random(37, 5));
        for (k, d) in frequency_error(&p, &t).unwrap() {
            let (fp, ft) = (naive_dft(&p, k), naive_dft(&t, k));
            assert!((d - (ft - fp).norm() / ft.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_coefficients_are_masked() {
        let t: Vec<f64> = (0..32)
            .map(|j| (2.0 * PI * 3.0 * j as f64 / 32.0).cos())
            .collect();
        let ks: Vec<usize> = frequency_error(&vec![0.0; 32], &t)
            .unwrap()
            .iter()
            .map(|&(k, _)| k)
            .collect();
        assert_eq!(ks, vec![3]);
    }

    #[test]
    fn weight_spectrum_examples() {
        let constant = MainNetWeights {
            layers: vec![
                LayerWeights {
                    w: Array2::from_elem((2, 2), 0.5),
                    b: Some(Array1::from_elem(2, 0.5)),
                },
                LayerWeights {
                    w: Array2::from_elem((1, 2), 0.5),
                    b: None,
                },
            ],
        };
        for s in weight_spectra(&constant) {
            assert!((s.re[0] - 0.5 * s.n_weights as f64).abs() < 1e-14);
            assert!((1..s.p()).all(|k| s.coeff(k).norm() < 1e-14));
        }
        let mut impulse = MainNetWeights::zeros(&Architecture::new(2, 3, 1));
        impulse.layers[0].w[[0, 0]] = 1.0;
        assert!(weight_spectra(&impulse)[0]
            .re
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));

        let w = MainNetWeights::init(
            &Architecture::new(2, 5, 2),
            &mut SeedTree::new(6).stream("init", 0),
        );
        for (l, s) in w.layers.iter().zip(weight_spectra(&w)) {
            let flat = l.to_flat();
            for k in 0..s.p() {
                assert!((s.coeff(k) - naive_dft(&flat, k)).norm() < 1e-10);
            }
        }
        let mut csv = Vec::new();
        weight_spectrum_report(&mut csv, &w).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("layer,k,re,im\n0,0,"));
        assert_eq!(
            text.lines().count(),
            1 + w.to_flat().iter().map(Vec::len).sum::<usize>()
        );
    }

    #[test]
    fn predict_field_layout() {
        let w = MainNetWeights::init(
            &Architecture::new(2, 4, 2),
            &mut SeedTree::new(7).stream("init", 0),
        );
        let lat = Lattice::new(5, 3);
        let f = predict_field(&w, Activation::Tanh, &lat).unwrap();
        assert_eq!(f.dim(), (3, 5));
        let direct =
            crate::nets::main_net_forward(&[lat.x[4], lat.t[1]], &w, Activation::Tanh).unwrap()[0];
        assert!((f[[1, 4]] - direct).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn relative_l2_is_scale_covariant(seed in 0u64..1000, c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
            let (p, t) = (random(20, seed), random(20, seed + 1));
            let sp: Vec<f64> = p.iter().map(|v| c * v).collect();
            let st: Vec<f64> = t.iter().map(|v| c * v).collect();
            let (a, b) = (relative_l2(&p, &t).unwrap(), relative_l2(&sp, &st).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn one_cell_shift_is_detected(seed in 0u64..1000, n in 8usize..80) {
            let t = random(n, seed);
            let mut shifted = t.clone();
            shifted.rotate_right(1);
            prop_assume!(t != shifted);
            prop_assert!(frequency_error(&shifted, &t).unwrap().iter().any(|&(_, d)| d > 1e-8));
        }
    }
}
