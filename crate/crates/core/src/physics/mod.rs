//! Residual, boundary and initial operators for the four benchmarks, and the
//! Monte Carlo physics-informed loss.
//!
//! Residual formulas are written once over [`Field`], so the same code runs
//! on plain `f64` point values and on batched tape nodes.

use std::ops::{Add, Mul, Sub};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Var};
use crate::hypernet::ParameterSample;
use crate::nets::{forward_dual, Activation, JetRequest, MainNetWeights, NetError, TapedNet};

/// Burgers viscosity.
pub const NU: f64 = 0.01;
/// Diffusion coefficient `D` of the diffusion-reaction problem.
pub const DIFFUSIVITY: f64 = 0.01;
/// Reaction coefficient `k` of the diffusion-reaction problem.
pub const REACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("point x = {0} lies outside the sensor range")]
    Interpolation(f64),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Antiderivative,
    Advection,
    Burgers,
    Diffusion,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Antiderivative,
        Benchmark::Advection,
        Benchmark::Burgers,
        Benchmark::Diffusion,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Antiderivative => "antiderivative",
            Benchmark::Advection => "advection",
            Benchmark::Burgers => "burgers",
            Benchmark::Diffusion => "diffusion",
        }
    }

    /// 1 for `x` alone, 2 for `(x, t)`.
    pub fn input_dim(self) -> usize {
        match self {
            Benchmark::Antiderivative => 1,
            _ => 2,
        }
    }

    pub fn is_time_dependent(self) -> bool {
        self.input_dim() == 2
    }

    /// Correlation length of the GRF that generates `η`.
    pub fn length_scale(self) -> f64 {
        match self {
            Benchmark::Burgers => 2.5,
            _ => 0.2,
        }
    }
}

impl std::str::FromStr for Benchmark {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}`"))
    }
}

/// A benchmark together with its physical constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeProblem {
    pub benchmark: Benchmark,
    pub nu: f64,
    pub diffusivity: f64,
    pub reaction: f64,
}

impl PdeProblem {
    pub fn new(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            nu: NU,
            diffusivity: DIFFUSIVITY,
            reaction: REACTION,
        }
    }
}

/// Values the residual formulas are generic over.
pub trait Field: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn scale(self, c: f64) -> Self;
}

impl Field for f64 {
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

impl Field for Var<'_> {
    fn scale(self, c: f64) -> Self {
        Var::scale(self, c)
    }
}

/// `ds/dx − u(x)`.
pub fn residual_antiderivative<F: Field>(s_x: F, u: F) -> F {
    s_x - u
}

/// `s_t + a(x) s_x`.
pub fn residual_advection<F: Field>(s_t: F, s_x: F, a: F) -> F {
    s_t + a * s_x
}

/// `s_t + s s_x − ν s_xx`.
pub fn residual_burgers<F: Field>(s: F, s_t: F, s_x: F, s_xx: F, nu: f64) -> F {
    s_t + s * s_x - s_xx.scale(nu)
}

/// `s_t − D s_xx − k s² − u(x)`.
pub fn residual_diffusion<F: Field>(s: F, s_t: F, s_xx: F, u: F, d: f64, k: f64) -> F {
    s_t - s_xx.scale(d) - (s * s).scale(k) - u
}

/// Network value and the input derivatives the residuals use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointDerivs<F> {
    pub s: F,
    pub s_x: F,
    pub s_xx: F,
    /// Zero for the time-independent problem.
    pub s_t: F,
}

impl PdeProblem {
    /// Residual at one point; `coef` is `u(x)` or `a(x)` and ignored by Burgers.
    pub fn residual<F: Field>(&self, d: &PointDerivs<F>, coef: F) -> F {
        match self.benchmark {
            Benchmark::Antiderivative => residual_antiderivative(d.s_x, coef),
            Benchmark::Advection => residual_advection(d.s_t, d.s_x, coef),
            Benchmark::Burgers => residual_burgers(d.s, d.s_t, d.s_x, d.s_xx, self.nu),
            Benchmark::Diffusion => {
                residual_diffusion(d.s, d.s_t, d.s_xx, coef, self.diffusivity, self.reaction)
            }
        }
    }

    fn needs_coefficient(&self) -> bool {
        self.benchmark != Benchmark::Burgers
    }

    /// Initial profile `s(x, 0)`.
    pub fn initial_value(&self, eta: &ParameterSample, x: f64) -> Result<f64, PhysicsError> {
        Ok(match self.benchmark {
            Benchmark::Advection => (std::f64::consts::PI * x).sin(),
            Benchmark::Burgers => interp(eta, x)?,
            Benchmark::Antiderivative | Benchmark::Diffusion => 0.0,
        })
    }

    /// Whether the boundary condition at `x ∈ {0, 1}` is imposed. Advection
    /// imposes it only where the characteristic enters the domain.
    pub fn imposes_bc_at(&self, eta: &ParameterSample, x: f64) -> Result<bool, PhysicsError> {
        Ok(match self.benchmark {
            Benchmark::Advection => {
                let a = interp(eta, x)?;
                if x == 0.0 {
                    a > 0.0
                } else {
                    a < 0.0
                }
            }
            _ => true,
        })
    }

    /// Dirichlet target on the boundary (not used by the periodic problem).
    pub fn boundary_value(&self, t: f64) -> f64 {
        match self.benchmark {
            Benchmark::Advection => (std::f64::consts::FRAC_PI_2 * t).sin(),
            _ => 0.0,
        }
    }
}

fn interp(eta: &ParameterSample, x: f64) -> Result<f64, PhysicsError> {
    eta.interpolate(x).ok_or(PhysicsError::Interpolation(x))
}

/// Collocation counts per visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationCounts {
    pub m_r: usize,
    pub m_bc: usize,
    pub m_ic: usize,
}

impl Default for CollocationCounts {
    fn default() -> Self {
        Self {
            m_r: 1024,
            m_bc: 128,
            m_ic: 128,
        }
    }
}

/// Sampled residual, boundary and initial points, one point per column.
///
/// Boundary points are stored with their `x ∈ {0, 1}`; for the periodic
/// problem they sit at `x = 0` and are paired with their mirror at `x = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub residual_pts: Array2<f64>,
    pub bc_pts: Array2<f64>,
    pub ic_pts: Array2<f64>,
    pub lambda_bc: f64,
    pub lambda_ic: f64,
}

impl CollocationBatch {
    /// Uniform i.i.d. points on each facet.
    pub fn sample<R: Rng + ?Sized>(
        bench: Benchmark,
        counts: CollocationCounts,
        lambda_bc: f64,
        lambda_ic: f64,
        rng: &mut R,
    ) -> Result<Self, PhysicsError> {
        if counts.m_r == 0 {
            return Err(PhysicsError::Config(
                "at least one residual point is required".into(),
            ));
        }
        if bench.is_time_dependent() && (counts.m_bc == 0 || counts.m_ic == 0) {
            return Err(PhysicsError::Config(
                "boundary and initial counts must be at least 1".into(),
            ));
        }
        let batch = match bench {
            Benchmark::Antiderivative => Self {
                residual_pts: Array2::from_shape_simple_fn((1, counts.m_r), || rng.gen::<f64>()),
                bc_pts: Array2::zeros((1, 1)),
                ic_pts: Array2::zeros((1, 0)),
                lambda_bc,
                lambda_ic,
            },
            _ => {
                let residual_pts =
                    Array2::from_shape_simple_fn((2, counts.m_r), || rng.gen::<f64>());
                let mut bc_pts = Array2::zeros((2, counts.m_bc));
                for i in 0..counts.m_bc {
                    bc_pts[[0, i]] = if bench != Benchmark::Burgers && i % 2 == 1 {
                        1.0
                    } else {
                        0.0
                    };
                    bc_pts[[1, i]] = rng.gen::<f64>();
                }
                let mut ic_pts = Array2::zeros((2, counts.m_ic));
                for i in 0..counts.m_ic {
                    ic_pts[[0, i]] = rng.gen::<f64>();
                }
                Self {
                    residual_pts,
                    bc_pts,
                    ic_pts,
                    lambda_bc,
                    lambda_ic,
                }
            }
        };
        batch.validate(bench)?;
        Ok(batch)
    }

    /// Checks shapes, facets and weights.
    pub fn validate(&self, bench: Benchmark) -> Result<(), PhysicsError> {
        let d = bench.input_dim();
        for (name, pts) in [
            ("residual", &self.residual_pts),
            ("boundary", &self.bc_pts),
            ("initial", &self.ic_pts),
        ] {
            if pts.nrows() != d {
                return Err(PhysicsError::Domain(format!(
                    "{name} points have {} coordinates, expected {d}",
                    pts.nrows()
                )));
            }
            if pts.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(PhysicsError::Domain(format!("{name} point outside [0, 1]")));
            }
        }
        if self.residual_pts.ncols() == 0 {
            return Err(PhysicsError::Domain("no residual points".into()));
        }
        for c in self.bc_pts.columns() {
            let ok = if bench == Benchmark::Burgers {
                c[0] == 0.0
            } else {
                c[0] == 0.0 || c[0] == 1.0
            };
            if !ok {
                return Err(PhysicsError::Domain(format!(
                    "boundary point with x = {}",
                    c[0]
                )));
            }
        }
        if bench == Benchmark::Antiderivative && self.ic_pts.ncols() > 0 {
            return Err(PhysicsError::Domain(
                "the time-independent problem has no initial facet".into(),
            ));
        }
        if bench.is_time_dependent() && self.ic_pts.row(1).iter().any(|&t| t != 0.0) {
            return Err(PhysicsError::Domain("initial point with t ≠ 0".into()));
        }
        if !(self.lambda_bc >= 0.0 && self.lambda_ic >= 0.0) {
            return Err(PhysicsError::Config(format!(
                "negative loss weight ({}, {})",
                self.lambda_bc, self.lambda_ic
            )));
        }
        Ok(())
    }
}

/// Mean-square physics loss with weighted boundary and initial terms.
/// Empty boundary or initial lists contribute nothing.
pub fn assemble_loss(
    res: &[f64],
    bc: &[f64],
    ic: &[f64],
    lambda_bc: f64,
    lambda_ic: f64,
) -> Result<f64, PhysicsError> {
    Ok(loss_components(res, bc, ic, lambda_bc, lambda_ic)?.total())
}

/// The three weighted terms of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub residual: f64,
    pub bc: f64,
    pub ic: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.residual + self.bc + self.ic
    }
}

pub fn loss_components(
    res: &[f64],
    bc: &[f64],
    ic: &[f64],
    lambda_bc: f64,
    lambda_ic: f64,
) -> Result<LossComponents, PhysicsError> {
    if res.is_empty() {
        return Err(PhysicsError::Config("residual list is empty".into()));
    }
    if !(lambda_bc >= 0.0 && lambda_ic >= 0.0) {
        return Err(PhysicsError::Config(format!(
            "negative loss weight ({lambda_bc}, {lambda_ic})"
        )));
    }
    let ms = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64
        }
    };
    Ok(LossComponents {
        residual: ms(res),
        bc: lambda_bc * ms(bc),
        ic: lambda_ic * ms(ic),
    })
}

fn point_derivs(
    problem: &PdeProblem,
    weights: &MainNetWeights,
    act: Activation,
    x: &[f64],
) -> Result<PointDerivs<f64>, PhysicsError> {
    let dx = forward_dual(x, 0, weights, act)?[0];
    let s_t = if problem.benchmark.is_time_dependent() {
        forward_dual(x, 1, weights, act)?[0].tangent1
    } else {
        0.0
    };
    Ok(PointDerivs {
        s: dx.primal,
        s_x: dx.tangent1,
        s_xx: dx.tangent2,
        s_t,
    })
}

/// Residuals at the columns of `pts`, without a tape.
pub fn residuals(
    problem: &PdeProblem,
    weights: &MainNetWeights,
    act: Activation,
    eta: &ParameterSample,
    pts: &Array2<f64>,
) -> Result<Vec<f64>, PhysicsError> {
    pts.columns()
        .into_iter()
        .map(|c| {
            let x = c.to_vec();
            let d = point_derivs(problem, weights, act, &x)?;
            let coef = if problem.needs_coefficient() {
                interp(eta, x[0])?
            } else {
                0.0
            };
            Ok(problem.residual(&d, coef))
        })
        .collect()
}

/// Boundary and initial residuals, without a tape. Periodic boundaries give
/// two entries per point: value mismatch, then slope mismatch.
pub fn bc_ic_terms(
    problem: &PdeProblem,
    weights: &MainNetWeights,
    act: Activation,
    eta: &ParameterSample,
    batch: &CollocationBatch,
) -> Result<(Vec<f64>, Vec<f64>), PhysicsError> {
    batch.validate(problem.benchmark)?;
    let mut bc = Vec::new();
    for c in batch.bc_pts.columns() {
        match problem.benchmark {
            Benchmark::Antiderivative => bc.push(forward_dual(&[c[0]], 0, weights, act)?[0].primal),
            Benchmark::Burgers => {
                let left = forward_dual(&[0.0, c[1]], 0, weights, act)?[0];
                let right = forward_dual(&[1.0, c[1]], 0, weights, act)?[0];
                bc.push(left.primal - right.primal);
                bc.push(left.tangent1 - right.tangent1);
            }
            _ => {
                let r = if problem.imposes_bc_at(eta, c[0])? {
                    forward_dual(&[c[0], c[1]], 0, weights, act)?[0].primal
                        - problem.boundary_value(c[1])
                } else {
                    0.0
                };
                bc.push(r);
            }
        }
    }
    let ic = batch
        .ic_pts
        .columns()
        .into_iter()
        .map(|c| {
            Ok(forward_dual(&[c[0], c[1]], 0, weights, act)?[0].primal
                - problem.initial_value(eta, c[0])?)
        })
        .collect::<Result<_, PhysicsError>>()?;
    Ok((bc, ic))
}

/// Loss of `weights` on `batch`, without a tape.
pub fn physics_loss(
    problem: &PdeProblem,
    weights: &MainNetWeights,
    act: Activation,
    eta: &ParameterSample,
    batch: &CollocationBatch,
) -> Result<LossComponents, PhysicsError> {
    let r = residuals(problem, weights, act, eta, &batch.residual_pts)?;
    let (bc, ic) = bc_ic_terms(problem, weights, act, eta, batch)?;
    loss_components(&r, &bc, &ic, batch.lambda_bc, batch.lambda_ic)
}

/// Weighted loss terms as scalar tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct TapedLoss<'t> {
    pub total: Var<'t>,
    pub residual: Var<'t>,
    pub bc: Var<'t>,
    pub ic: Var<'t>,
}

impl TapedLoss<'_> {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            residual: self.residual.scalar(),
            bc: self.bc.scalar(),
            ic: self.ic.scalar(),
        }
    }
}

fn coefficient_row<'t>(
    tape: &'t Tape,
    eta: &ParameterSample,
    pts: &Array2<f64>,
) -> Result<Var<'t>, PhysicsError> {
    let v: Vec<f64> = pts
        .row(0)
        .iter()
        .map(|&x| interp(eta, x))
        .collect::<Result<_, _>>()?;
    Ok(tape.row(&v))
}

/// Mean square of the concatenation of `pieces`, times `lambda`.
fn weighted_mean_square<'t>(tape: &'t Tape, pieces: &[Var<'t>], lambda: f64) -> Var<'t> {
    let n: usize = pieces.iter().map(|p| p.shape().0 * p.shape().1).sum();
    if n == 0 {
        return tape.constant(Array2::zeros((1, 1)));
    }
    let sum = pieces
        .iter()
        .map(|p| p.square().sum())
        .reduce(|a, b| a + b)
        .expect("nonempty");
    sum.scale(lambda / n as f64)
}

/// The physics-informed loss of a taped network on `batch`.
pub fn taped_loss<'t>(
    problem: &PdeProblem,
    net: &TapedNet<'t>,
    eta: &ParameterSample,
    batch: &CollocationBatch,
) -> Result<TapedLoss<'t>, PhysicsError> {
    let bench = problem.benchmark;
    batch.validate(bench)?;
    let tape = net.layers[0].w.tape();
    let req = match bench {
        Benchmark::Antiderivative => JetRequest::new(&[0], &[]),
        Benchmark::Advection => JetRequest::new(&[0, 1], &[]),
        Benchmark::Burgers | Benchmark::Diffusion => JetRequest::new(&[0, 1], &[0]),
    };
    let jets = net.forward(&batch.residual_pts, &req)?;
    let zero = || tape.constant(Array2::zeros(jets.value.shape()));
    let d = PointDerivs {
        s: jets.value,
        s_x: jets.d(0).expect("requested"),
        s_xx: jets.dd(0).unwrap_or_else(zero),
        s_t: jets.d(1).unwrap_or_else(zero),
    };
    let coef = if problem.needs_coefficient() {
        coefficient_row(tape, eta, &batch.residual_pts)?
    } else {
        zero()
    };
    let r = problem.residual(&d, coef);
    let residual = weighted_mean_square(tape, &[r], 1.0);

    let bc_pieces: Vec<Var<'t>> = match bench {
        Benchmark::Antiderivative => {
            vec![net.forward(&batch.bc_pts, &JetRequest::value_only())?.value]
        }
        Benchmark::Burgers => {
            let mut right_pts = batch.bc_pts.clone();
            right_pts.row_mut(0).fill(1.0);
            let left = net.forward(&batch.bc_pts, &JetRequest::new(&[0], &[]))?;
            let right = net.forward(&right_pts, &JetRequest::new(&[0], &[]))?;
            vec![
                left.value - right.value,
                left.d(0).expect("requested") - right.d(0).expect("requested"),
            ]
        }
        _ => {
            let mut target = Vec::with_capacity(batch.bc_pts.ncols());
            let mut mask = Vec::with_capacity(batch.bc_pts.ncols());
            for c in batch.bc_pts.columns() {
                target.push(problem.boundary_value(c[1]));
                mask.push(if problem.imposes_bc_at(eta, c[0])? {
                    1.0
                } else {
                    0.0
                });
            }
            let v = net.forward(&batch.bc_pts, &JetRequest::value_only())?.value;
            vec![(v - tape.row(&target)) * tape.row(&mask)]
        }
    };
    let bc = weighted_mean_square(tape, &bc_pieces, batch.lambda_bc);

    let ic = if batch.ic_pts.ncols() == 0 {
        tape.constant(Array2::zeros((1, 1)))
    } else {
        let target: Vec<f64> = batch
            .ic_pts
            .row(0)
            .iter()
            .map(|&x| problem.initial_value(eta, x))
            .collect::<Result<_, _>>()?;
        let v = net.forward(&batch.ic_pts, &JetRequest::value_only())?.value;
        weighted_mean_square(tape, &[v - tape.row(&target)], batch.lambda_ic)
    };
    Ok(TapedLoss {
        total: residual + bc + ic,
        residual,
        bc,
        ic,
    })
}
