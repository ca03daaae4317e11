//! The main network `f(x, η)`: an MLP whose weights are supplied from
//! outside (by the hypernetworks, or directly during fine-tuning).
//!
//! Hidden layers compute `γ = σ(W γ_prev + b)`; the output layer is a plain
//! bias-free product `W γ`.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, DualValue, Tape, Var};
use crate::rng::truncated_normal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite weight in layer {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Tanh,
    Sine,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Gelu,
        Activation::Tanh,
        Activation::Sine,
        Activation::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Tanh => "tanh",
            Activation::Sine => "sine",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        self.derivative(0, z)
    }

    /// `order`-th derivative at `z`, for orders 0 through 3.
    ///
    /// GELU is the exact form `z Φ(z)` with the Gaussian CDF.
    pub fn derivative(self, order: u8, z: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let pdf = FRAC_1_SQRT_2PI * (-0.5 * z * z).exp();
                match order {
                    0 => z * normal_cdf(z),
                    1 => normal_cdf(z) + z * pdf,
                    2 => pdf * (2.0 - z * z),
                    3 => pdf * (z * z * z - 4.0 * z),
                    _ => panic!("activation derivative order {order} not supported"),
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                let s = 1.0 - t * t;
                match order {
                    0 => t,
                    1 => s,
                    2 => -2.0 * t * s,
                    3 => s * (6.0 * t * t - 2.0),
                    _ => panic!("activation derivative order {order} not supported"),
                }
            }
            Activation::Sine => match order {
                0 => z.sin(),
                1 => z.cos(),
                2 => -z.sin(),
                3 => -z.cos(),
                _ => panic!("activation derivative order {order} not supported"),
            },
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                let ds = s * (1.0 - s);
                match order {
                    0 => s,
                    1 => ds,
                    2 => ds * (1.0 - 2.0 * s),
                    3 => ds * (1.0 - 6.0 * s + 6.0 * s * s),
                    _ => panic!("activation derivative order {order} not supported"),
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown activation `{s}`"))
    }
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Shape of one linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub out_dim: usize,
    pub in_dim: usize,
    pub bias: bool,
}

impl LayerShape {
    /// Flattened length: weights row-major, then bias.
    pub fn n_weights(&self) -> usize {
        self.out_dim * self.in_dim + if self.bias { self.out_dim } else { 0 }
    }
}

/// MLP architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub width: usize,
    /// Number of hidden (activated) layers; the net has `hidden_layers + 1`
    /// linear layers.
    pub hidden_layers: usize,
    #[serde(default = "one")]
    pub output_dim: usize,
}

fn one() -> usize {
    1
}

impl Architecture {
    pub fn new(input_dim: usize, width: usize, hidden_layers: usize) -> Self {
        Self {
            input_dim,
            width,
            hidden_layers,
            output_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.width == 0 || self.hidden_layers == 0 || self.output_dim == 0
        {
            return Err(NetError::Shape(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.hidden_layers {
            shapes.push(LayerShape {
                out_dim: self.width,
                in_dim: prev,
                bias: true,
            });
            prev = self.width;
        }
        shapes.push(LayerShape {
            out_dim: self.output_dim,
            in_dim: prev,
            bias: false,
        });
        shapes
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn total_weights(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::n_weights).sum()
    }
}

/// Weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w: Array2<f64>,
    pub b: Option<Array1<f64>>,
}

impl LayerWeights {
    pub fn shape(&self) -> LayerShape {
        LayerShape {
            out_dim: self.w.nrows(),
            in_dim: self.w.ncols(),
            bias: self.b.is_some(),
        }
    }

    /// Row-major weights followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w.iter().copied().collect();
        if let Some(b) = &self.b {
            v.extend(b.iter().copied());
        }
        v
    }

    pub fn from_flat(shape: LayerShape, flat: &[f64]) -> Result<Self, NetError> {
        if flat.len() != shape.n_weights() {
            return Err(NetError::Shape(format!(
                "{} values for layer {:?}",
                flat.len(),
                shape
            )));
        }
        let nw = shape.out_dim * shape.in_dim;
        let w = Array2::from_shape_vec((shape.out_dim, shape.in_dim), flat[..nw].to_vec())
            .map_err(|e| NetError::Shape(e.to_string()))?;
        let b = shape.bias.then(|| Array1::from(flat[nw..].to_vec()));
        Ok(Self { w, b })
    }
}

/// Full parameterization of the main network.
#[derive(Debug, Clone, PartialEq)]
pub struct MainNetWeights {
    pub layers: Vec<LayerWeights>,
}

impl MainNetWeights {
    /// Checks layer chaining, the bias-free output layer and finiteness.
    pub fn validate(&self) -> Result<(), NetError> {
        if self.layers.len() < 2 {
            return Err(NetError::Shape(format!(
                "need at least 2 layers, got {}",
                self.layers.len()
            )));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].w.nrows() != pair[1].w.ncols() {
                return Err(NetError::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].w.nrows(),
                    i + 1,
                    pair[1].w.ncols()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            if last == l.b.is_some() {
                return Err(NetError::Shape(format!(
                    "layer {i}: bias present = {}",
                    l.b.is_some()
                )));
            }
            if let Some(b) = &l.b {
                if b.len() != l.w.nrows() {
                    return Err(NetError::Shape(format!(
                        "layer {i}: bias length {}",
                        b.len()
                    )));
                }
            }
            if !l.to_flat().iter().all(|v| v.is_finite()) {
                return Err(NetError::NonFinite(i));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn from_flat(arch: &Architecture, flats: &[Vec<f64>]) -> Result<Self, NetError> {
        let shapes = arch.layer_shapes();
        if flats.len() != shapes.len() {
            return Err(NetError::Shape(format!(
                "{} flat layers for {} shapes",
                flats.len(),
                shapes.len()
            )));
        }
        let layers = shapes
            .iter()
            .zip(flats)
            .map(|(s, f)| LayerWeights::from_flat(*s, f))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { layers })
    }

    pub fn to_flat(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(LayerWeights::to_flat).collect()
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|s| LayerWeights {
                w: Array2::zeros((s.out_dim, s.in_dim)),
                b: s.bias.then(|| Array1::zeros(s.out_dim)),
            })
            .collect();
        Self { layers }
    }

    /// Glorot-scaled truncated normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|s| {
                let std = (2.0 / (s.in_dim + s.out_dim) as f64).sqrt();
                LayerWeights {
                    w: Array2::from_shape_simple_fn((s.out_dim, s.in_dim), || {
                        truncated_normal(rng, std)
                    }),
                    b: s.bias.then(|| Array1::zeros(s.out_dim)),
                }
            })
            .collect();
        Self { layers }
    }
}

/// Evaluates the network at a single point.
pub fn main_net_forward(
    x: &[f64],
    weights: &MainNetWeights,
    act: Activation,
) -> Result<Vec<f64>, NetError> {
    if x.len() != weights.input_dim() {
        return Err(NetError::Shape(format!(
            "input of length {} for input dim {}",
            x.len(),
            weights.input_dim()
        )));
    }
    let mut h = Array1::from(x.to_vec());
    let last = weights.layers.len() - 1;
    for (i, layer) in weights.layers.iter().enumerate() {
        let mut z = layer.w.dot(&h);
        if i == last {
            return Ok(z.to_vec());
        }
        if let Some(b) = &layer.b {
            z += b;
        }
        h = z.mapv(|v| act.apply(v));
    }
    unreachable!("network has at least one layer")
}

/// Evaluates the network on the columns of `points` (`input_dim × B`).
pub fn forward_batch(
    points: &Array2<f64>,
    weights: &MainNetWeights,
    act: Activation,
) -> Result<Array2<f64>, NetError> {
    if points.nrows() != weights.input_dim() {
        return Err(NetError::Shape(format!(
            "points have {} rows, net expects {}",
            points.nrows(),
            weights.input_dim()
        )));
    }
    let last = weights.layers.len() - 1;
    let mut h = points.clone();
    for (i, layer) in weights.layers.iter().enumerate() {
        let mut z = layer.w.dot(&h);
        if i == last {
            return Ok(z);
        }
        if let Some(b) = &layer.b {
            z += &b.view().insert_axis(ndarray::Axis(1));
        }
        z.mapv_inplace(|v| act.apply(v));
        h = z;
    }
    unreachable!("network has at least one layer")
}

/// Value, first and second derivative along input axis `dim`, without a tape.
pub fn forward_dual(
    x: &[f64],
    dim: usize,
    weights: &MainNetWeights,
    act: Activation,
) -> Result<Vec<DualValue>, NetError> {
    if x.len() != weights.input_dim() || dim >= x.len() {
        return Err(NetError::Shape(format!(
            "point of length {}, axis {dim}",
            x.len()
        )));
    }
    let mut h: Vec<DualValue> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == dim {
                DualValue::variable(v)
            } else {
                DualValue::constant(v)
            }
        })
        .collect();
    let last = weights.layers.len() - 1;
    for (li, layer) in weights.layers.iter().enumerate() {
        let z: Vec<DualValue> = layer
            .w
            .rows()
            .into_iter()
            .enumerate()
            .map(|(r, row)| {
                let acc: DualValue = row.iter().zip(&h).map(|(&w, &hv)| hv.scale(w)).sum();
                match &layer.b {
                    Some(b) => acc + DualValue::constant(b[r]),
                    None => acc,
                }
            })
            .collect();
        if li == last {
            return Ok(z);
        }
        h = z.into_iter().map(|v| v.activate(act)).collect();
    }
    unreachable!("network has at least one layer")
}

/// Which input derivatives a taped forward pass should carry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JetRequest {
    /// Axes with a first derivative.
    pub first: Vec<usize>,
    /// Axes with a pure second derivative; each must also be in `first`.
    pub second: Vec<usize>,
}

impl JetRequest {
    pub fn new(first: &[usize], second: &[usize]) -> Self {
        Self {
            first: first.to_vec(),
            second: second.to_vec(),
        }
    }

    pub fn value_only() -> Self {
        Self::default()
    }
}

/// Network output and its requested input derivatives, all `out × B` nodes.
#[derive(Debug, Clone)]
pub struct Jets<'t> {
    pub value: Var<'t>,
    first: Vec<(usize, Var<'t>)>,
    second: Vec<(usize, Var<'t>)>,
}

impl<'t> Jets<'t> {
    pub fn d(&self, dim: usize) -> Option<Var<'t>> {
        self.first.iter().find(|(d, _)| *d == dim).map(|(_, v)| *v)
    }

    pub fn dd(&self, dim: usize) -> Option<Var<'t>> {
        self.second.iter().find(|(d, _)| *d == dim).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapedLayer<'t> {
    pub w: Var<'t>,
    pub b: Option<Var<'t>>,
}

/// Main network whose weights are nodes on a tape.
#[derive(Debug, Clone)]
pub struct TapedNet<'t> {
    pub layers: Vec<TapedLayer<'t>>,
    pub act: Activation,
}

impl<'t> TapedNet<'t> {
    /// Places `weights` on the tape as trainable leaves or constants.
    pub fn from_weights(
        tape: &'t Tape,
        weights: &MainNetWeights,
        act: Activation,
        trainable: bool,
    ) -> Self {
        let leaf = |a: Array2<f64>| {
            if trainable {
                tape.param(a)
            } else {
                tape.constant(a)
            }
        };
        let layers = weights
            .layers
            .iter()
            .map(|l| TapedLayer {
                w: leaf(l.w.clone()),
                b: l.b
                    .as_ref()
                    .map(|b| leaf(b.clone().insert_axis(ndarray::Axis(1)))),
            })
            .collect();
        Self { layers, act }
    }

    /// Every weight node in layer order (`w` then `b`).
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.w).chain(l.b))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.shape().1
    }

    /// Forward pass over the columns of `points`, propagating jets.
    pub fn forward(&self, points: &Array2<f64>, req: &JetRequest) -> Result<Jets<'t>, NetError> {
        let tape = self.layers[0].w.tape();
        let d_in = points.nrows();
        let batch = points.ncols();
        if d_in != self.input_dim() {
            return Err(NetError::Shape(format!(
                "points have {d_in} rows, net expects {}",
                self.input_dim()
            )));
        }
        for &d in req.first.iter().chain(&req.second) {
            if d >= d_in {
                return Err(NetError::Shape(format!(
                    "derivative axis {d} out of range for input dim {d_in}"
                )));
            }
        }
        if let Some(d) = req.second.iter().find(|d| !req.first.contains(d)) {
            return Err(NetError::Shape(format!(
                "second derivative on axis {d} requires its first derivative"
            )));
        }

        let mut h = tape.constant(points.clone());
        // Seeds: d x / d x_dim is the unit vector e_dim in every column.
        let mut dh: Vec<Var<'t>> = req
            .first
            .iter()
            .map(|&d| {
                let mut e = Array2::zeros((d_in, batch));
                e.row_mut(d).fill(1.0);
                tape.constant(e)
            })
            .collect();
        let mut ddh: Vec<Option<Var<'t>>> = vec![None; req.second.len()];
        let second_pos: Vec<usize> = req
            .second
            .iter()
            .map(|d| {
                req.first
                    .iter()
                    .position(|f| f == d)
                    .expect("checked above")
            })
            .collect();

        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let z = layer.w.matmul(h)?;
            let dz: Vec<Var<'t>> = dh
                .iter()
                .map(|&v| layer.w.matmul(v))
                .collect::<Result<_, _>>()?;
            let ddz: Vec<Option<Var<'t>>> = ddh
                .iter()
                .map(|v| v.map(|v| layer.w.matmul(v)).transpose())
                .collect::<Result<_, _>>()?;
            if li == last {
                return Ok(Jets {
                    value: z,
                    first: req.first.iter().copied().zip(dz).collect(),
                    second: req
                        .second
                        .iter()
                        .copied()
                        .zip(
                            ddz.into_iter()
                                .map(|v| v.unwrap_or_else(|| zeros_like(tape, z))),
                        )
                        .collect(),
                });
            }
            let z = match layer.b {
                Some(b) => z.add_bias(b)?,
                None => z,
            };
            h = z.activation(self.act, 0)?;
            if dz.is_empty() {
                continue;
            }
            let s1 = z.activation(self.act, 1)?;
            let s2 = if req.second.is_empty() {
                None
            } else {
                Some(z.activation(self.act, 2)?)
            };
            ddh = second_pos
                .iter()
                .zip(&ddz)
                .map(|(&p, ddzi)| {
                    let s2 = s2.expect("second derivatives requested");
                    let curv = s2 * dz[p] * dz[p];
                    match ddzi {
                        Some(v) => curv + s1 * *v,
                        None => curv,
                    }
                })
                .map(Some)
                .collect();
            dh = dz.iter().map(|&v| s1 * v).collect();
        }
        unreachable!("network has at least one layer")
    }
}

fn zeros_like<'t>(tape: &'t Tape, v: Var<'t>) -> Var<'t> {
    tape.constant(Array2::zeros(v.shape()))
}

/// Output, first and second derivative along axis `dim` at a single point,
/// as nodes on the network's tape.
pub fn eval_with_input_derivs<'t>(
    net: &TapedNet<'t>,
    x: &[f64],
    dim: usize,
) -> Result<(Var<'t>, Var<'t>, Var<'t>), NetError> {
    let pts = Array2::from_shape_vec((x.len(), 1), x.to_vec())
        .map_err(|e| NetError::Shape(e.to_string()))?;
    let jets = net.forward(&pts, &JetRequest::new(&[dim], &[dim]))?;
    Ok((
        jets.value,
        jets.d(dim).expect("requested"),
        jets.dd(dim).expect("requested"),
    ))
}
