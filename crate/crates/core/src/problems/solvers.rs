//! Classical reference solvers, used only to score trained networks.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use super::ProblemError;

/// Uniform evaluation grid over `[0, 1]` in space and, if present, time.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub x: Vec<f64>,
    /// `[0.0]` for the time-independent problem.
    pub t: Vec<f64>,
}

pub fn linspace(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

impl Lattice {
    pub fn new(nx: usize, nt: usize) -> Self {
        Self {
            x: linspace(nx),
            t: if nt <= 1 { vec![0.0] } else { linspace(nt) },
        }
    }

    fn t_intervals(&self) -> usize {
        self.t.len().saturating_sub(1).max(1)
    }

    fn t_end(&self) -> f64 {
        *self.t.last().expect("nonempty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverMeta {
    pub scheme: &'static str,
    pub space_points: usize,
    pub time_steps: usize,
}

/// Reference field on a lattice, `values[[t, x]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub lattice: Lattice,
    pub values: Array2<f64>,
    pub meta: SolverMeta,
}

fn check_finite(values: &Array2<f64>, what: &str) -> Result<(), ProblemError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ProblemError::Numerical(format!(
            "{what} produced a non-finite value"
        )))
    }
}

/// Linear interpolation from the uniform grid `j / (n − 1)` to `xs`.
fn resample(grid_vals: &[f64], xs: &[f64]) -> Vec<f64> {
    let m = grid_vals.len() - 1;
    xs.iter()
        .map(|&x| {
            let pos = x.clamp(0.0, 1.0) * m as f64;
            let j = (pos.floor() as usize).min(m.saturating_sub(1));
            let f = pos - j as f64;
            if m == 0 {
                grid_vals[0]
            } else {
                grid_vals[j] * (1.0 - f) + grid_vals[j + 1] * f
            }
        })
        .collect()
}

/// Tolerances of the adaptive Runge–Kutta integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-12,
        }
    }
}

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Dormand–Prince 5(4) for the scalar ODE `s' = f(x, s)`, `s(x_out[0]) = s0`,
/// reporting `s` at each of the increasing abscissae `x_out`.
pub fn dopri5<F: Fn(f64, f64) -> f64>(
    f: F,
    s0: f64,
    x_out: &[f64],
    opts: OdeOptions,
) -> Result<(Vec<f64>, usize), ProblemError> {
    let mut out = Vec::with_capacity(x_out.len());
    let Some(&x0) = x_out.first() else {
        return Ok((out, 0));
    };
    let (mut x, mut s) = (x0, s0);
    out.push(s);
    let mut h = 1e-3;
    let mut steps = 0;
    for &target in &x_out[1..] {
        if target < x {
            return Err(ProblemError::Config(
                "output abscissae must be increasing".into(),
            ));
        }
        while x < target {
            let last = x + h >= target;
            let step = if last { target - x } else { h };
            let mut k = [0.0; 7];
            for i in 0..7 {
                let si = s + step * (0..i).map(|j| DP_A[i][j] * k[j]).sum::<f64>();
                k[i] = f(x + DP_C[i] * step, si);
            }
            let s5 = s + step * (0..7).map(|i| DP_B5[i] * k[i]).sum::<f64>();
            let s4 = s + step * (0..7).map(|i| DP_B4[i] * k[i]).sum::<f64>();
            let scale = opts.atol + opts.rtol * s.abs().max(s5.abs());
            let err = ((s5 - s4) / scale).abs();
            if !err.is_finite() {
                return Err(ProblemError::Numerical(
                    "non-finite value in the Runge–Kutta stages".into(),
                ));
            }
            if err <= 1.0 {
                x = if last { target } else { x + step };
                s = s5;
                steps += 1;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = step * factor;
            if h < opts.h_min && x < target {
                return Err(ProblemError::Numerical(format!(
                    "step size underflow at x = {x}"
                )));
            }
        }
        out.push(s);
    }
    Ok((out, steps))
}

/// `s(x) = ∫_0^x u`, reported on `lattice.x`.
pub fn solve_antiderivative_reference<U: Fn(f64) -> f64>(
    u: U,
    lattice: &Lattice,
    opts: OdeOptions,
) -> Result<ReferenceSolution, ProblemError> {
    let mut xs = lattice.x.clone();
    let starts_at_zero = xs.first() == Some(&0.0);
    if !starts_at_zero {
        xs.insert(0, 0.0);
    }
    let (mut s, steps) = dopri5(|x, _| u(x), 0.0, &xs, opts)?;
    if !starts_at_zero {
        s.remove(0);
    }
    let values = Array2::from_shape_vec((1, s.len()), s).expect("row");
    check_finite(&values, "antiderivative solver")?;
    Ok(ReferenceSolution {
        lattice: Lattice {
            x: lattice.x.clone(),
            t: vec![0.0],
        },
        values,
        meta: SolverMeta {
            scheme: "dopri5",
            space_points: lattice.x.len(),
            time_steps: steps,
        },
    })
}

/// First-order upwind for `s_t + a(x) s_x = 0` on `nx` nodes, with
/// `s(x, 0) = sin(πx)` and `s = sin(πt/2)` on inflow boundaries. The time
/// step satisfies `max|a| Δt/Δx ≤ cfl`, refined to a multiple of the output
/// cadence.
pub fn solve_advection_reference<A: Fn(f64) -> f64>(
    a: A,
    nx: usize,
    cfl: f64,
    lattice: &Lattice,
) -> Result<ReferenceSolution, ProblemError> {
    if nx < 3 || !(cfl > 0.0 && cfl <= 1.0) {
        return Err(ProblemError::Config(format!(
            "advection solver needs nx ≥ 3 and 0 < cfl ≤ 1 (nx = {nx}, cfl = {cfl})"
        )));
    }
    let grid = linspace(nx);
    let dx = 1.0 / (nx - 1) as f64;
    let av: Vec<f64> = grid.iter().map(|&x| a(x)).collect();
    let amax = av.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let t_end = lattice.t_end();
    let per_out = lattice.t_intervals();
    let needed = ((amax * t_end / (cfl * dx)).ceil() as usize).max(nx - 1);
    let steps = needed.div_ceil(per_out) * per_out;
    let dt = t_end / steps as f64;
    let stride = steps / per_out;
    let inflow_left = av[0] > 0.0;
    let inflow_right = av[nx - 1] < 0.0;

    let mut s: Vec<f64> = grid.iter().map(|&x| (PI * x).sin()).collect();
    let mut next = s.clone();
    let mut values = Array2::zeros((lattice.t.len(), lattice.x.len()));
    values
        .row_mut(0)
        .assign(&ndarray::Array1::from(resample(&s, &lattice.x)));
    let r = dt / dx;
    for n in 1..=steps {
        let t = n as f64 * dt;
        for j in 0..nx {
            let upwind_left = if j == 0 {
                false
            } else if j == nx - 1 {
                true
            } else {
                av[j] > 0.0
            };
            let grad = if upwind_left {
                s[j] - s[j - 1]
            } else {
                s[j + 1] - s[j]
            };
            next[j] = s[j] - r * av[j] * grad;
        }
        let g = (0.5 * PI * t).sin();
        if inflow_left {
            next[0] = g;
        }
        if inflow_right {
            next[nx - 1] = g;
        }
        std::mem::swap(&mut s, &mut next);
        if n % stride == 0 {
            values
                .row_mut(n / stride)
                .assign(&ndarray::Array1::from(resample(&s, &lattice.x)));
        }
    }
    check_finite(&values, "advection solver")?;
    Ok(ReferenceSolution {
        lattice: lattice.clone(),
        values,
        meta: SolverMeta {
            scheme: "upwind",
            space_points: nx,
            time_steps: steps,
        },
    })
}

fn wavenumber(j: usize, n: usize) -> f64 {
    let k = if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    };
    2.0 * PI * k
}

/// Pseudo-spectral solver for periodic viscous Burgers on `modes` points,
/// conservative nonlinear term with 2/3 dealiasing, classical RK4 in time.
pub fn solve_burgers_reference<U: Fn(f64) -> f64>(
    u0: U,
    nu: f64,
    modes: usize,
    lattice: &Lattice,
) -> Result<ReferenceSolution, ProblemError> {
    if modes < 8 || !modes.is_multiple_of(2) {
        return Err(ProblemError::Config(format!(
            "Burgers solver needs an even mode count ≥ 8, got {modes}"
        )));
    }
    let n = modes;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let inv_n = 1.0 / n as f64;
    let cutoff = n / 3;
    let ks: Vec<f64> = (0..n)
        .map(|j| if j == n / 2 { 0.0 } else { wavenumber(j, n) })
        .collect();
    let keep: Vec<bool> = (0..n).map(|j| j.min(n - j) <= cutoff).collect();

    let mut uh: Vec<Complex64> = (0..n)
        .map(|j| Complex64::new(u0(j as f64 / n as f64), 0.0))
        .collect();
    let amp = uh.iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
    fwd.process(&mut uh);

    let rhs = |uh: &[Complex64]| -> Vec<Complex64> {
        let mut u = uh.to_vec();
        inv.process(&mut u);
        let mut sq: Vec<Complex64> = u
            .iter()
            .map(|v| Complex64::new(0.5 * (v.re * inv_n).powi(2), 0.0))
            .collect();
        fwd.process(&mut sq);
        (0..n)
            .map(|j| {
                let adv = if keep[j] {
                    -Complex64::new(0.0, ks[j]) * sq[j]
                } else {
                    Complex64::new(0.0, 0.0)
                };
                adv - uh[j] * (nu * ks[j] * ks[j])
            })
            .collect()
    };

    let kmax = PI * n as f64;
    let dt_max = (1.0 / (nu * kmax * kmax).max(1e-300)).min(1.0 / (amp.max(1e-12) * kmax));
    let t_end = lattice.t_end();
    let per_out = lattice.t_intervals();
    let steps = ((t_end / dt_max).ceil() as usize).div_ceil(per_out).max(1) * per_out;
    let dt = t_end / steps as f64;
    let stride = steps / per_out;

    let eval = |uh: &[Complex64]| -> Vec<f64> {
        lattice
            .x
            .iter()
            .map(|&x| {
                let mut acc = uh[0].re;
                for j in 1..n / 2 {
                    let ph = 2.0 * PI * j as f64 * x;
                    acc += 2.0 * (uh[j] * Complex64::new(ph.cos(), ph.sin())).re;
                }
                acc += uh[n / 2].re * (PI * n as f64 * x).cos();
                acc * inv_n
            })
            .collect()
    };

    let mut values = Array2::zeros((lattice.t.len(), lattice.x.len()));
    values.row_mut(0).assign(&ndarray::Array1::from(eval(&uh)));
    let axpy = |a: &[Complex64], b: &[Complex64], c: f64| -> Vec<Complex64> {
        a.iter().zip(b).map(|(x, y)| x + y * c).collect()
    };
    for step in 1..=steps {
        let k1 = rhs(&uh);
        let k2 = rhs(&axpy(&uh, &k1, 0.5 * dt));
        let k3 = rhs(&axpy(&uh, &k2, 0.5 * dt));
        let k4 = rhs(&axpy(&uh, &k3, dt));
        for j in 0..n {
            uh[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (dt / 6.0);
        }
        let peak = uh.iter().map(|c| c.norm()).sum::<f64>() * inv_n;
        if !(peak <= 1e3) {
            return Err(ProblemError::Numerical(format!(
                "Burgers solution blew up at t = {}",
                step as f64 * dt
            )));
        }
        if step % stride == 0 {
            values
                .row_mut(step / stride)
                .assign(&ndarray::Array1::from(eval(&uh)));
        }
    }
    check_finite(&values, "Burgers solver")?;
    Ok(ReferenceSolution {
        lattice: lattice.clone(),
        values,
        meta: SolverMeta {
            scheme: "pseudo-spectral rk4",
            space_points: n,
            time_steps: steps,
        },
    })
}

/// Crank–Nicolson for `s_t = D s_xx + k s² + u(x)` with zero boundary and
/// initial data on `intervals + 1` nodes, reaction and source explicit.
pub fn solve_diffusion_reference<U: Fn(f64) -> f64>(
    u: U,
    d: f64,
    k: f64,
    intervals: usize,
    steps: usize,
    lattice: &Lattice,
) -> Result<ReferenceSolution, ProblemError> {
    if intervals < 2 || steps == 0 {
        return Err(ProblemError::Config(
            "diffusion solver needs at least two intervals and one step".into(),
        ));
    }
    let per_out = lattice.t_intervals();
    let steps = steps.div_ceil(per_out) * per_out;
    let stride = steps / per_out;
    let m = intervals;
    let dx = 1.0 / m as f64;
    let dt = lattice.t_end() / steps as f64;
    let grid = linspace(m + 1);
    let src: Vec<f64> = grid.iter().map(|&x| u(x)).collect();
    let r = 0.5 * d * dt / (dx * dx);

    // Constant tridiagonal (−r, 1 + 2r, −r) on the interior; factor once.
    let ni = m - 1;
    let mut c_prime = vec![0.0; ni];
    let mut denom = vec![0.0; ni];
    for i in 0..ni {
        let prev = if i == 0 { 0.0 } else { c_prime[i - 1] };
        denom[i] = 1.0 + 2.0 * r + r * prev;
        c_prime[i] = -r / denom[i];
    }

    let mut s = vec![0.0; m + 1];
    let mut rhs = vec![0.0; ni];
    let mut values = Array2::zeros((lattice.t.len(), lattice.x.len()));
    for n in 1..=steps {
        for i in 0..ni {
            let j = i + 1;
            rhs[i] =
                s[j] + r * (s[j - 1] - 2.0 * s[j] + s[j + 1]) + dt * (k * s[j] * s[j] + src[j]);
        }
        // Forward sweep, then back substitution.
        let mut prev = 0.0;
        for i in 0..ni {
            rhs[i] = (rhs[i] + r * prev) / denom[i];
            prev = rhs[i];
        }
        for i in (0..ni).rev() {
            let next = if i + 1 < ni { s[i + 2] } else { 0.0 };
            s[i + 1] = rhs[i] - c_prime[i] * next;
        }
        if !s.iter().all(|v| v.abs() <= 1e6) {
            return Err(ProblemError::Numerical(format!(
                "diffusion-reaction solution exceeded 1e6 at t = {}",
                n as f64 * dt
            )));
        }
        if n % stride == 0 {
            values
                .row_mut(n / stride)
                .assign(&ndarray::Array1::from(resample(&s, &lattice.x)));
        }
    }
    Ok(ReferenceSolution {
        lattice: lattice.clone(),
        values,
        meta: SolverMeta {
            scheme: "crank-nicolson",
            space_points: m + 1,
            time_steps: steps,
        },
    })
}
