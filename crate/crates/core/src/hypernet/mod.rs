//! Per-layer hypernetworks that emit truncated weight spectra.
//!
//! Each main-network layer `i` has its own small MLP `F_i` taking the
//! discretized parameter `η` to `2 p_i` reals (real parts, then imaginary
//! parts of `p_i` Fourier coefficients). The layer's flattened weights are
//! recovered with the truncated inverse DFT of [`codec::spectrum_to_weights`].
//!
//! Outputs are in orthonormal units: coefficient `Ŵ_k` is `√N_i` times the
//! raw output, so a unit change of an output moves the weights by `O(1/√N_i)`
//! rather than `O(1/N_i)`.
//!
//! Two ablation modes share the machinery: `full_spectrum` (one hypernetwork
//! per layer emitting all `N_i` weights directly) and `single_hyper` (one
//! hypernetwork emitting every layer's weights).

pub mod codec;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Var};
use crate::nets::{
    Activation, Architecture, LayerShape, MainNetWeights, NetError, TapedLayer, TapedNet,
};
use crate::rng::truncated_normal;
use crate::tensors::NamedTensors;

pub use codec::{
    codec_roundtrip_error, hermitian_reconstruct, hermitian_weights, spectrum_to_weights,
    tail_energies, weights_to_spectrum, write_spectrum_csv, CodecError, WeightSpectrum,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HyperError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

/// `η` sampled at the sensor locations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSample {
    pub values: Vec<f64>,
    pub sensors: Vec<f64>,
}

impl ParameterSample {
    pub fn new(values: Vec<f64>, sensors: Vec<f64>) -> Result<Self, HyperError> {
        let s = Self { values, sensors };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HyperError> {
        if self.values.len() != self.sensors.len() || self.values.is_empty() {
            return Err(HyperError::Shape(format!(
                "{} values at {} sensors",
                self.values.len(),
                self.sensors.len()
            )));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(HyperError::Shape("non-finite parameter value".into()));
        }
        if self.sensors.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HyperError::Shape(
                "sensors must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    /// Piecewise-linear interpolation; `None` outside the sensor hull.
    pub fn interpolate(&self, x: f64) -> Option<f64> {
        interpolate(&self.sensors, &self.values, x)
    }
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`; `None` outside the hull.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let (first, last) = (*xs.first()?, *xs.last()?);
    let tol = 1e-12 * (last - first).abs().max(1.0);
    if x < first - tol || x > last + tol || !x.is_finite() {
        return None;
    }
    let x = x.clamp(first, last);
    let i = xs
        .partition_point(|&s| s <= x)
        .clamp(1, xs.len().max(2) - 1);
    if xs.len() == 1 {
        return Some(ys[0]);
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    Some(ys[i - 1] + t * (ys[i] - ys[i - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HyperMode {
    #[default]
    FourierReduced,
    FullSpectrum,
    SingleHyper,
}

impl HyperMode {
    pub fn id(self) -> u32 {
        match self {
            HyperMode::FourierReduced => 0,
            HyperMode::FullSpectrum => 1,
            HyperMode::SingleHyper => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        [
            HyperMode::FourierReduced,
            HyperMode::FullSpectrum,
            HyperMode::SingleHyper,
        ]
        .into_iter()
        .find(|m| m.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            HyperMode::FourierReduced => "fourier_reduced",
            HyperMode::FullSpectrum => "full_spectrum",
            HyperMode::SingleHyper => "single_hyper",
        }
    }
}

impl std::str::FromStr for HyperMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            HyperMode::FourierReduced,
            HyperMode::FullSpectrum,
            HyperMode::SingleHyper,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

/// Truncation counts for the input layer, every hidden layer and the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralCodecConfig {
    pub p_input: usize,
    pub p_hidden: usize,
    pub p_output: usize,
}

impl SpectralCodecConfig {
    pub fn truncation(&self, layer: usize, n_layers: usize) -> usize {
        if layer == 0 {
            self.p_input
        } else if layer + 1 == n_layers {
            self.p_output
        } else {
            self.p_hidden
        }
    }

    pub fn truncations(&self, arch: &Architecture) -> Result<Vec<usize>, HyperError> {
        let shapes = arch.layer_shapes();
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = self.truncation(i, shapes.len());
                if p == 0 || p > s.n_weights() {
                    Err(HyperError::Config(format!(
                        "layer {i}: truncation {p} outside 1..={}",
                        s.n_weights()
                    )))
                } else {
                    Ok(p)
                }
            })
            .collect()
    }

    /// Every `p` halved (rounded up, at least 1).
    pub fn halved(&self) -> Self {
        let h = |p: usize| p.div_ceil(2).max(1);
        Self {
            p_input: h(self.p_input),
            p_hidden: h(self.p_hidden),
            p_output: h(self.p_output),
        }
    }
}

/// Hypernetwork trunk shape, shared by every per-layer hypernetwork.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub init_std: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            width: 64,
            hidden_layers: 2,
            activation: Activation::Gelu,
            init_std: 0.05,
        }
    }
}

/// Plain MLP with a linear output layer; weights are `out × in`, biases `out × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array2<f64>>,
}

impl Mlp {
    fn init<R: Rng + ?Sized>(dims: &[usize], std: f64, out_bias: Vec<f64>, rng: &mut R) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            weights.push(Array2::from_shape_simple_fn((pair[1], pair[0]), || {
                truncated_normal(rng, std)
            }));
            biases.push(Array2::zeros((pair[1], 1)));
        }
        let last = biases.last_mut().expect("at least one layer");
        assert_eq!(last.len(), out_bias.len());
        last.assign(&Array2::from_shape_vec((out_bias.len(), 1), out_bias).expect("bias column"));
        Self { weights, biases }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn output_dim(&self) -> usize {
        self.biases.last().map_or(0, |b| b.nrows())
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }
}

fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

/// Trainable hypernetwork parameters `θ` plus the layout they generate.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperNetParams {
    pub mode: HyperMode,
    pub nets: Vec<Mlp>,
    pub arch: Architecture,
    pub hyper: HyperConfig,
    /// Per-layer truncation; unused outside `fourier_reduced`.
    pub truncations: Vec<usize>,
}

impl HyperNetParams {
    fn trunk_dims(m: usize, hyper: &HyperConfig, out: usize) -> Vec<usize> {
        let mut d = vec![m];
        d.extend(std::iter::repeat_n(hyper.width, hyper.hidden_layers));
        d.push(out);
        d
    }

    /// Output width of hypernetwork `net` under `mode`.
    fn output_dims(mode: HyperMode, shapes: &[LayerShape], truncations: &[usize]) -> Vec<usize> {
        match mode {
            HyperMode::FourierReduced => truncations.iter().map(|p| 2 * p).collect(),
            HyperMode::FullSpectrum => shapes.iter().map(LayerShape::n_weights).collect(),
            HyperMode::SingleHyper => vec![shapes.iter().map(LayerShape::n_weights).sum()],
        }
    }

    /// Truncated-normal trunk weights and zero biases, except the output bias,
    /// which encodes a Glorot-initialized base network so that the generated
    /// main network starts in a trainable regime.
    pub fn init<R: Rng + ?Sized>(
        mode: HyperMode,
        arch: Architecture,
        codec: SpectralCodecConfig,
        hyper: HyperConfig,
        m: usize,
        rng: &mut R,
    ) -> Result<Self, HyperError> {
        arch.validate()?;
        if m == 0 || hyper.width == 0 {
            return Err(HyperError::Config(
                "hypernetwork input and width must be positive".into(),
            ));
        }
        let truncations = codec.truncations(&arch)?;
        let shapes = arch.layer_shapes();
        let base = MainNetWeights::init(&arch, rng).to_flat();
        let base_out: Vec<Vec<f64>> = match mode {
            HyperMode::FourierReduced => base
                .iter()
                .zip(&truncations)
                .map(|(flat, &p)| {
                    let s = weights_to_spectrum(flat, p)?;
                    // Doubling k ≥ 1 makes the literal inverse equal the
                    // Hermitian low-pass of the base weights.
                    let mut re = s.re.clone();
                    let mut im = s.im.clone();
                    for k in 1..p {
                        if 2 * k != flat.len() {
                            re[k] *= 2.0;
                            im[k] *= 2.0;
                        }
                    }
                    re.extend(im);
                    let c = coefficient_scale(flat.len());
                    Ok(re.into_iter().map(|v| v / c).collect())
                })
                .collect::<Result<_, CodecError>>()?,
            HyperMode::FullSpectrum => base,
            HyperMode::SingleHyper => vec![base.concat()],
        };
        let nets = Self::output_dims(mode, &shapes, &truncations)
            .into_iter()
            .zip(base_out)
            .map(|(out, bias)| {
                Mlp::init(&Self::trunk_dims(m, &hyper, out), hyper.init_std, bias, rng)
            })
            .collect();
        Ok(Self {
            mode,
            nets,
            arch,
            hyper,
            truncations,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.nets.iter().map(Mlp::n_params).sum()
    }

    /// Parameters as named tensors (`hyper{i}.w{j}`, `hyper{i}.b{j}`).
    pub fn to_tensors(&self) -> NamedTensors {
        let mut t = NamedTensors::default();
        for (i, net) in self.nets.iter().enumerate() {
            for (j, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
                t.push(format!("hyper{i}.w{j}"), w.clone());
                t.push(format!("hyper{i}.b{j}"), b.clone());
            }
        }
        t
    }

    /// Replaces parameter values from tensors in [`Self::to_tensors`] order.
    pub fn load_tensors(&mut self, t: &NamedTensors) -> Result<(), HyperError> {
        let expected = self.to_tensors();
        if expected.len() != t.len() {
            return Err(HyperError::Shape(format!(
                "{} tensors, expected {}",
                t.len(),
                expected.len()
            )));
        }
        for ((en, ev), (gn, gv)) in expected.iter().zip(t.iter()) {
            if en != gn || ev.dim() != gv.dim() {
                return Err(HyperError::Shape(format!(
                    "tensor {gn} {:?} does not match {en} {:?}",
                    gv.dim(),
                    ev.dim()
                )));
            }
        }
        let mut it = t.iter().map(|(_, v)| v.clone());
        for net in &mut self.nets {
            for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
                *w = it.next().expect("counted");
                *b = it.next().expect("counted");
            }
        }
        Ok(())
    }

    /// Puts `θ` on `tape` as trainable leaves.
    pub fn place<'a, 't>(&'a self, tape: &'t Tape) -> PlacedHyper<'a, 't> {
        let nets = self
            .nets
            .iter()
            .map(|n| {
                n.weights
                    .iter()
                    .zip(&n.biases)
                    .map(|(w, b)| (tape.param(w.clone()), tape.param(b.clone())))
                    .collect()
            })
            .collect();
        PlacedHyper {
            params: self,
            nets,
            tape,
        }
    }

    /// Output of hypernetwork `layer` as a weight spectrum (fourier mode only).
    pub fn hyper_forward(
        &self,
        eta: &ParameterSample,
        layer: usize,
    ) -> Result<WeightSpectrum, HyperError> {
        if self.mode != HyperMode::FourierReduced {
            return Err(HyperError::Config(format!(
                "hyper_forward needs fourier_reduced mode, not {}",
                self.mode.name()
            )));
        }
        let net = self
            .nets
            .get(layer)
            .ok_or_else(|| HyperError::Shape(format!("no hypernetwork {layer}")))?;
        let n = self.arch.layer_shapes()[layer].n_weights();
        let c = coefficient_scale(n);
        let raw: Vec<f64> = mlp_forward(net, &eta.values, self.hyper.activation)?
            .into_iter()
            .map(|v| c * v)
            .collect();
        Ok(WeightSpectrum::from_split(&raw, n)?)
    }

    /// Main-network weights generated for `eta`, without recording gradients.
    pub fn generate_weights(&self, eta: &ParameterSample) -> Result<MainNetWeights, HyperError> {
        let tape = Tape::new();
        let placed = self.place(&tape);
        let net = placed.generate(eta, Activation::default())?;
        tape.check()?;
        let layers = net
            .layers
            .iter()
            .map(|l| crate::nets::LayerWeights {
                w: l.w.value().clone(),
                b: l.b.map(|b| b.value().column(0).to_owned()),
            })
            .collect();
        Ok(MainNetWeights { layers })
    }
}

/// Factor from raw hypernetwork outputs to DFT coefficients of a layer with
/// `n` weights.
pub fn coefficient_scale(n: usize) -> f64 {
    (n as f64).sqrt()
}

/// Pure MLP forward used as the tape-free path for a single input vector.
pub fn mlp_forward(net: &Mlp, input: &[f64], act: Activation) -> Result<Vec<f64>, HyperError> {
    if input.len() != net.input_dim() {
        return Err(HyperError::Shape(format!(
            "input length {} for hypernetwork input {}",
            input.len(),
            net.input_dim()
        )));
    }
    let mut h = Array2::from_shape_vec((input.len(), 1), input.to_vec()).expect("column");
    let last = net.weights.len() - 1;
    for (j, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let z = w.dot(&h) + b;
        h = if j == last {
            z
        } else {
            z.mapv(|v| act.apply(v))
        };
    }
    Ok(h.index_axis(Axis(1), 0).to_vec())
}

/// Hypernetwork parameters recorded on a tape.
pub struct PlacedHyper<'a, 't> {
    params: &'a HyperNetParams,
    nets: Vec<Vec<(Var<'t>, Var<'t>)>>,
    tape: &'t Tape,
}

impl<'t> PlacedHyper<'_, 't> {
    /// Trainable leaves in [`HyperNetParams::to_tensors`] order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.nets
            .iter()
            .flatten()
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }

    fn run(&self, net: usize, eta: Var<'t>) -> Result<Var<'t>, AdError> {
        let layers = &self.nets[net];
        let mut h = eta;
        for (j, &(w, b)) in layers.iter().enumerate() {
            let z = w.matmul(h)?.add_bias(b)?;
            h = if j + 1 == layers.len() {
                z
            } else {
                z.activation(self.params.hyper.activation, 0)?
            };
        }
        Ok(h)
    }

    /// Generates the main network for `eta` on the tape.
    pub fn generate(
        &self,
        eta: &ParameterSample,
        act: Activation,
    ) -> Result<TapedNet<'t>, HyperError> {
        let p = self.params;
        if eta.m() != p.input_dim() {
            return Err(HyperError::Shape(format!(
                "η has {} values, hypernetworks expect {}",
                eta.m(),
                p.input_dim()
            )));
        }
        let input = self.tape.column(&eta.values);
        let shapes = p.arch.layer_shapes();
        let flats: Vec<Var<'t>> = match p.mode {
            HyperMode::FourierReduced => shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    self.run(i, input)?
                        .scale(coefficient_scale(s.n_weights()))
                        .spectral_inverse(s.n_weights())
                })
                .collect::<Result<_, _>>()?,
            HyperMode::FullSpectrum => (0..shapes.len())
                .map(|i| self.run(i, input))
                .collect::<Result<_, _>>()?,
            HyperMode::SingleHyper => {
                let all = self.run(0, input)?;
                let mut start = 0;
                shapes
                    .iter()
                    .map(|s| {
                        let v = all.slice_rows(start, s.n_weights());
                        start += s.n_weights();
                        v
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        let layers = shapes
            .iter()
            .zip(flats)
            .map(|(s, flat)| {
                let nw = s.out_dim * s.in_dim;
                let w = flat.slice_rows(0, nw)?.reshape(s.out_dim, s.in_dim)?;
                let b = if s.bias {
                    Some(flat.slice_rows(nw, s.out_dim)?)
                } else {
                    None
                };
                Ok(TapedLayer { w, b })
            })
            .collect::<Result<_, AdError>>()?;
        Ok(TapedNet { layers, act })
    }
}

/// Exact parameter accounting for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamCount {
    pub mode: HyperMode,
    /// Trainable hypernetwork parameters in `mode`.
    pub hypernet_params: usize,
    /// Weights of the generated main network.
    pub main_net_weights: usize,
    /// Trainable parameters of the layered full-spectrum counterpart.
    pub full_spectrum_params: usize,
    /// `hypernet_params / full_spectrum_params`.
    pub ratio: f64,
}

pub fn parameter_count(
    arch: &Architecture,
    codec: &SpectralCodecConfig,
    hyper: &HyperConfig,
    m: usize,
    mode: HyperMode,
) -> Result<ParamCount, HyperError> {
    arch.validate()?;
    let shapes = arch.layer_shapes();
    let truncations = codec.truncations(arch)?;
    let count = |mode| -> usize {
        HyperNetParams::output_dims(mode, &shapes, &truncations)
            .into_iter()
            .map(|out| mlp_param_count(&HyperNetParams::trunk_dims(m, hyper, out)))
            .sum()
    };
    let hypernet_params = count(mode);
    let full_spectrum_params = count(HyperMode::FullSpectrum);
    Ok(ParamCount {
        mode,
        hypernet_params,
        main_net_weights: arch.total_weights(),
        full_spectrum_params,
        ratio: hypernet_params as f64 / full_spectrum_params as f64,
    })
}
