//! Matrix-valued reverse-mode tape.
//!
//! Every node holds a dense `f64` matrix. Column vectors are `n × 1`,
//! scalars are `1 × 1`. Nodes are appended in evaluation order, so the node
//! list is already topologically sorted and the backward pass is a single
//! reverse sweep.
//!
//! Non-finite values are detected when a node is created. The first offending
//! node is latched on the tape and reported by [`Tape::gradient`] and
//! [`Tape::check`], which keeps the arithmetic operators infallible.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::nets::Activation;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("unsupported primitive: {0}")]
    Unsupported(String),
    #[error("gradient requested for a non-scalar output of shape {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Act {
        arg: usize,
        kind: Activation,
        order: u8,
    },
    Square(usize),
    Sum(usize),
    MeanSquare(usize),
    SliceRows {
        arg: usize,
        start: usize,
    },
    Reshape(usize),
    BroadcastCols(usize),
    Spectral {
        arg: usize,
        n: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Act { .. } => "activation",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::MeanSquare(..) => "mean_square",
            Op::SliceRows { .. } => "slice_rows",
            Op::Reshape(..) => "reshape",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Spectral { .. } => "spectral_inverse",
        }
    }
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<(usize, &'static str)>>,
    planner: RefCell<FftPlanner<f64>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({}x{})", self.idx, r, c)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self {
            nodes: RefCell::default(),
            fault: Cell::default(),
            planner: RefCell::new(FftPlanner::new()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        if self.fault.get().is_none() && !value.iter().all(|v| v.is_finite()) {
            self.fault.set(Some((idx, op.name())));
        }
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var { tape: self, idx }
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&self, value: Array2<f64>) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn column(&self, values: &[f64]) -> Var<'_> {
        self.constant(
            Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape"),
        )
    }

    pub fn row(&self, values: &[f64]) -> Var<'_> {
        self.constant(
            Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape"),
        )
    }

    /// First non-finite node, if any.
    pub fn check(&self) -> Result<(), AdError> {
        match self.fault.get() {
            Some((node, op)) => Err(AdError::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    fn value_of(&self, idx: usize) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[idx].value)
    }

    fn fft(&self, n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        let mut planner = self.planner.borrow_mut();
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    }

    /// Reverse sweep from the scalar `output`; returns adjoints for `wrt`.
    ///
    /// Leaves with no path to `output` get a zero gradient.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Array2<f64>>, AdError> {
        self.check()?;
        let nodes = self.nodes.borrow();
        let out = &nodes[output.idx];
        if out.value.dim() != (1, 1) {
            let (rows, cols) = out.value.dim();
            return Err(AdError::NonScalarOutput { rows, cols });
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; output.idx + 1];
        adj[output.idx] = Some(Array2::ones((1, 1)));

        for idx in (0..=output.idx).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if let Op::Leaf = node.op {
                adj[idx] = Some(g);
                continue;
            }
            let mut emit = |target: usize, contrib: Array2<f64>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut adj[target] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[a].needs_grad {
                        emit(a, g.dot(&nodes[b].value.t()));
                    }
                    if nodes[b].needs_grad {
                        emit(b, nodes[a].value.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a].needs_grad {
                        emit(a, g.clone());
                    }
                    emit(b, g);
                }
                Op::Sub(a, b) => {
                    if nodes[a].needs_grad {
                        emit(a, g.clone());
                    }
                    emit(b, -g);
                }
                Op::Mul(a, b) => {
                    if nodes[a].needs_grad {
                        emit(a, &g * &nodes[b].value);
                    }
                    if nodes[b].needs_grad {
                        emit(b, &g * &nodes[a].value);
                    }
                }
                Op::AddBias(a, b) => {
                    if nodes[b].needs_grad {
                        emit(b, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    emit(a, g);
                }
                Op::Scale(a, c) => emit(a, g * c),
                Op::Shift(a) => emit(a, g),
                Op::Act { arg, kind, order } => {
                    let mut d = nodes[arg].value.clone();
                    let o = order + 1;
                    Zip::from(&mut d)
                        .and(&g)
                        .for_each(|z, &gi| *z = gi * kind.derivative(o, *z));
                    emit(arg, d);
                }
                Op::Square(a) => emit(a, &g * &nodes[a].value * 2.0),
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    emit(a, Array2::from_elem(nodes[a].value.dim(), s));
                }
                Op::MeanSquare(a) => {
                    let v = &nodes[a].value;
                    let s = g[[0, 0]] * 2.0 / v.len() as f64;
                    emit(a, v * s);
                }
                Op::SliceRows { arg, start } => {
                    let mut d = Array2::zeros(nodes[arg].value.dim());
                    let rows = g.nrows();
                    d.slice_mut(ndarray::s![start..start + rows, ..]).assign(&g);
                    emit(arg, d);
                }
                Op::Reshape(arg) => {
                    let dim = nodes[arg].value.dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    emit(
                        arg,
                        Array2::from_shape_vec(dim, flat).expect("reshape adjoint"),
                    );
                }
                Op::BroadcastCols(arg) => emit(arg, g.sum_axis(Axis(1)).insert_axis(Axis(1))),
                Op::Spectral { arg, n } => {
                    let p = nodes[arg].value.nrows() / 2;
                    let mut buf: Vec<Complex64> =
                        g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                    self.fft(n, false).process(&mut buf);
                    let inv_n = 1.0 / n as f64;
                    let mut d = Array2::zeros((2 * p, 1));
                    for k in 0..p {
                        d[[k, 0]] = buf[k].re * inv_n;
                        d[[p + k, 0]] = buf[k].im * inv_n;
                    }
                    emit(arg, d);
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|v| {
                adj.get(v.idx)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Array2::zeros(nodes[v.idx].value.dim()))
            })
            .collect())
    }
}

fn shape_err(op: &'static str, detail: String) -> AdError {
    AdError::Shape { op, detail }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_of(self.idx).dim()
    }

    pub fn value(&self) -> Ref<'t, Array2<f64>> {
        self.tape.value_of(self.idx)
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self) -> f64 {
        self.value()[[0, 0]]
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Var<'t> {
        debug_assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
        let value = {
            let a = self.value();
            let b = other.value();
            assert_eq!(
                a.dim(),
                b.dim(),
                "{}: shape mismatch {:?} vs {:?}",
                op.name(),
                a.dim(),
                b.dim()
            );
            f(&a, &b)
        };
        let needs = self.tape.needs(self.idx) || self.tape.needs(other.idx);
        self.tape.push(op, value, needs)
    }

    fn unary(self, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var<'t> {
        let value = f(&self.value());
        let needs = self.tape.needs(self.idx);
        self.tape.push(op, value, needs)
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>, AdError> {
        let (ar, ac) = self.shape();
        let (br, bc) = rhs.shape();
        if ac != br {
            return Err(shape_err("matmul", format!("{ar}x{ac} · {br}x{bc}")));
        }
        let value = self.value().dot(&*rhs.value());
        let needs = self.tape.needs(self.idx) || self.tape.needs(rhs.idx);
        Ok(self.tape.push(Op::MatMul(self.idx, rhs.idx), value, needs))
    }

    /// Adds the column vector `bias` to every column.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>, AdError> {
        let (r, _) = self.shape();
        if bias.shape() != (r, 1) {
            return Err(shape_err(
                "add_bias",
                format!("rows {r}, bias {:?}", bias.shape()),
            ));
        }
        let value = &*self.value() + &*bias.value();
        let needs = self.tape.needs(self.idx) || self.tape.needs(bias.idx);
        Ok(self
            .tape
            .push(Op::AddBias(self.idx, bias.idx), value, needs))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, c), |a| a * c)
    }

    /// Adds a constant to every entry.
    pub fn shift(self, c: f64) -> Var<'t> {
        self.unary(Op::Shift(self.idx), |a| a + c)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.idx), |a| a * a)
    }

    /// `order`-th derivative of the activation, applied elementwise.
    pub fn activation(self, kind: Activation, order: u8) -> Result<Var<'t>, AdError> {
        if order > 2 {
            return Err(AdError::Unsupported(format!(
                "activation derivative of order {order}"
            )));
        }
        Ok(self.unary(
            Op::Act {
                arg: self.idx,
                kind,
                order,
            },
            |a| a.mapv(|z| kind.derivative(order, z)),
        ))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.idx), |a| Array2::from_elem((1, 1), a.sum()))
    }

    /// Mean of squared entries, a `1 × 1` node.
    pub fn mean_square(self) -> Var<'t> {
        self.unary(Op::MeanSquare(self.idx), |a| {
            let n = a.len().max(1) as f64;
            Array2::from_elem((1, 1), a.iter().map(|v| v * v).sum::<f64>() / n)
        })
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>, AdError> {
        let (r, _) = self.shape();
        if start + len > r {
            return Err(shape_err("slice_rows", format!("{start}+{len} > {r}")));
        }
        Ok(self.unary(
            Op::SliceRows {
                arg: self.idx,
                start,
            },
            |a| a.slice(ndarray::s![start..start + len, ..]).to_owned(),
        ))
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>, AdError> {
        let (r, c) = self.shape();
        if r * c != rows * cols {
            return Err(shape_err("reshape", format!("{r}x{c} -> {rows}x{cols}")));
        }
        Ok(self.unary(Op::Reshape(self.idx), |a| {
            let flat: Vec<f64> = a.iter().copied().collect();
            Array2::from_shape_vec((rows, cols), flat).expect("reshape")
        }))
    }

    /// Repeats a column vector `cols` times.
    pub fn broadcast_cols(self, cols: usize) -> Result<Var<'t>, AdError> {
        let (r, c) = self.shape();
        if c != 1 {
            return Err(shape_err(
                "broadcast_cols",
                format!("expected a column, got {r}x{c}"),
            ));
        }
        Ok(self.unary(Op::BroadcastCols(self.idx), |a| {
            a.broadcast((r, cols)).expect("broadcast").to_owned()
        }))
    }

    /// Truncated inverse DFT with real projection.
    ///
    /// `self` is a `2p × 1` column holding real parts then imaginary parts of
    /// `p` coefficients; the result is the `n × 1` column
    /// `Re[(1/n) Σ_{k<p} c_k exp(2πi k j / n)]`.
    pub fn spectral_inverse(self, n: usize) -> Result<Var<'t>, AdError> {
        let (r, c) = self.shape();
        if c != 1 || r % 2 != 0 || r / 2 > n || r == 0 {
            return Err(shape_err(
                "spectral_inverse",
                format!("{r}x{c} coefficients for n = {n}"),
            ));
        }
        let p = r / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        {
            let v = self.value();
            for k in 0..p {
                buf[k] = Complex64::new(v[[k, 0]], v[[p + k, 0]]);
            }
        }
        self.tape.fft(n, true).process(&mut buf);
        let inv_n = 1.0 / n as f64;
        let value = Array2::from_shape_fn((n, 1), |(j, _)| buf[j].re * inv_n);
        let needs = self.tape.needs(self.idx);
        Ok(self
            .tape
            .push(Op::Spectral { arg: self.idx, n }, value, needs))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add(self.idx, rhs.idx), |a, b| a + b)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub(self.idx, rhs.idx), |a, b| a - b)
    }
}

/// Elementwise (Hadamard) product.
impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul(self.idx, rhs.idx), |a, b| a * b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

/// Value and gradient of a scalar function of a flat parameter vector.
///
/// The closure receives the parameters as an `n × 1` leaf and must return
/// a `1 × 1` node.
pub fn grad<F>(params: &[f64], f: F) -> Result<(f64, Vec<f64>), AdError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, AdError>,
{
    let tape = Tape::new();
    let x = tape.param(Array2::from_shape_vec((params.len(), 1), params.to_vec()).expect("column"));
    let out = f(&tape, x)?;
    let g = tape.gradient(out, &[x])?;
    let value = out.scalar();
    Ok((value, g[0].iter().copied().collect()))
}
