//! Numerical checks of the truncation and gradient-dominance theorems.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::hypernet::codec::tail_energies;
use crate::par::{map_range, Execution};
use crate::rng::SeedTree;

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub n: usize,
    pub eps: f64,
    pub p_min: usize,
    /// Round-trip error at `p_min`.
    pub error: f64,
}

/// Smallest `p` whose Hermitian-completed round trip has error `≤ eps`.
///
/// Errors come from the Parseval tail energy, which is exactly zero once the
/// retained set covers the spectrum.
pub fn verify_theorem1(w: &[f64], eps: f64) -> Result<Theorem1Report, AnalysisError> {
    if !(eps >= 0.0) {
        return Err(AnalysisError::Config(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    if w.is_empty() {
        return Err(AnalysisError::Shape("empty weight vector".into()));
    }
    let errors: Vec<f64> = tail_energies(w).into_iter().map(f64::sqrt).collect();
    let p_min = errors
        .iter()
        .position(|&e| e <= eps)
        .expect("tail energy vanishes at p = N")
        + 1;
    Ok(Theorem1Report {
        n: w.len(),
        eps,
        p_min,
        error: errors[p_min - 1],
    })
}

/// One instance of the `W = ΛB` reparameterization for a fixed row `i`.
///
/// `g1`, `g2` are the gradients of the row's weights at frequencies
/// `k₁ > k₂`; the gradient with respect to `λ_ij` is `Σ_t b_jt g_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Instance {
    pub lambda: Array2<f64>,
    pub basis: Array2<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub alpha: f64,
    pub eps: f64,
    pub tau: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Outcome {
    /// `min_j |L_λij(k₁) / L_λij(k₂)|`.
    pub lhs_ratio: f64,
    /// `max_t |L_wit(k₁) / L_wit(k₂)|`.
    pub rhs_max_ratio: f64,
    pub holds: bool,
}

/// Column of the largest `|g1_t / g2_t|`, ignoring zero denominators.
pub fn dominant_column(g1: &[f64], g2: &[f64]) -> Option<usize> {
    (0..g1.len())
        .filter(|&t| g2[t] != 0.0)
        .max_by(|&a, &b| (g1[a] / g2[a]).abs().total_cmp(&(g1[b] / g2[b]).abs()))
}

/// `min{ |g2τ| ε / (G1 + G2 r − G2 ε), |g1τ| / G1 }` with `r = |g1τ / g2τ|`
/// and `G` the off-`τ` absolute sums. `None` when `ε > r`.
pub fn alpha_bound(g1: &[f64], g2: &[f64], tau: usize, eps: f64) -> Option<f64> {
    let (a1, a2) = (g1[tau].abs(), g2[tau].abs());
    let r = a1 / a2;
    if !(eps <= r) {
        return None;
    }
    let off = |g: &[f64]| {
        g.iter()
            .enumerate()
            .filter(|&(t, _)| t != tau)
            .map(|(_, v)| v.abs())
            .sum::<f64>()
    };
    let (big1, big2) = (off(g1), off(g2));
    let first = a2 * eps / (big1 + big2 * r - big2 * eps);
    let second = if big1 > 0.0 { a1 / big1 } else { f64::INFINITY };
    Some(first.min(second))
}

impl Theorem2Instance {
    /// Random Gaussian gradients and `Λ`, `α` from [`alpha_bound`] times
    /// `inflate`, off-`τ` basis entries uniform in `(−α, α)`.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        m: usize,
        eps: f64,
        inflate: f64,
        rng: &mut R,
    ) -> Result<Self, AnalysisError> {
        if m == 0 || 4 * m > d {
            return Err(AnalysisError::Config(format!(
                "need 1 ≤ M ≤ d/4, got M = {m}, d = {d}"
            )));
        }
        let g1: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let g2: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let tau = dominant_column(&g1, &g2)
            .ok_or_else(|| AnalysisError::UndefinedMetric("all k₂ gradients vanish".into()))?;
        let alpha = inflate
            * alpha_bound(&g1, &g2, tau, eps)
                .ok_or_else(|| AnalysisError::Config("eps exceeds the dominant ratio".into()))?;
        let lambda = Array2::from_shape_simple_fn((d, m), || rng.sample(StandardNormal));
        let mut basis = Array2::zeros((m, d));
        for j in 0..m {
            for t in 0..d {
                basis[[j, t]] = if t == tau {
                    1.0
                } else {
                    alpha * rng.gen_range(-1.0..1.0)
                };
            }
        }
        Ok(Self {
            lambda,
            basis,
            g1,
            g2,
            alpha,
            eps,
            tau,
        })
    }

    /// Checks shapes and the basis constraints.
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let (m, d) = self.basis.dim();
        if self.lambda.dim() != (d, m) || self.g1.len() != d || self.g2.len() != d || self.tau >= d
        {
            return Err(AnalysisError::Shape(
                "inconsistent instance dimensions".into(),
            ));
        }
        if m == 0 || 4 * m > d {
            return Err(AnalysisError::Config(format!(
                "need 1 ≤ M ≤ d/4, got M = {m}, d = {d}"
            )));
        }
        for j in 0..m {
            for t in 0..d {
                let b = self.basis[[j, t]];
                let ok = if t == self.tau {
                    b == 1.0
                } else {
                    b.abs() <= self.alpha
                };
                if !ok {
                    return Err(AnalysisError::Config(format!(
                        "basis entry ({j}, {t}) = {b} violates the bound {}",
                        self.alpha
                    )));
                }
            }
        }
        Ok(())
    }

    /// `L_λij(k) = Σ_t b_jt L_wit(k)` for every `j`.
    pub fn lambda_gradients(&self, g: &[f64]) -> Vec<f64> {
        self.basis
            .rows()
            .into_iter()
            .map(|b| b.iter().zip(g).map(|(b, g)| b * g).sum())
            .collect()
    }
}

/// Evaluates both sides of the dominance inequality.
///
/// A vanishing denominator on either side yields `UndefinedMetric`, which
/// sweeps count as skipped.
pub fn verify_theorem2(inst: &Theorem2Instance) -> Result<Theorem2Outcome, AnalysisError> {
    inst.validate()?;
    let rhs_max_ratio = dominant_column(&inst.g1, &inst.g2)
        .map(|t| (inst.g1[t] / inst.g2[t]).abs())
        .ok_or_else(|| AnalysisError::UndefinedMetric("all k₂ weight gradients vanish".into()))?;
    let (l1, l2) = (
        inst.lambda_gradients(&inst.g1),
        inst.lambda_gradients(&inst.g2),
    );
    if l2.contains(&0.0) {
        return Err(AnalysisError::UndefinedMetric(
            "a k₂ gradient with respect to λ vanishes".into(),
        ));
    }
    let lhs_ratio = l1
        .iter()
        .zip(&l2)
        .map(|(a, b)| (a / b).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(Theorem2Outcome {
        lhs_ratio,
        rhs_max_ratio,
        holds: lhs_ratio >= rhs_max_ratio - inst.eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub instance: usize,
    pub lhs_ratio: f64,
    pub rhs_max_ratio: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Summary {
    pub instances: usize,
    pub d: usize,
    pub m: usize,
    pub eps: f64,
    pub alpha_scale: f64,
    pub holds: usize,
    pub fails: usize,
    pub skipped: usize,
    pub counterexamples: Vec<Counterexample>,
}

/// Runs `n` random instances; instance `i` draws from stream `("theorem2", i)`.
pub fn theorem2_sweep(
    n: usize,
    d: usize,
    m: usize,
    eps: f64,
    alpha_scale: f64,
    seed: u64,
    exec: Execution,
) -> Result<Theorem2Summary, AnalysisError> {
    if !(eps >= 0.0 && alpha_scale > 0.0) {
        return Err(AnalysisError::Config(
            "eps must be nonnegative and the alpha scale positive".into(),
        ));
    }
    if m == 0 || 4 * m > d {
        return Err(AnalysisError::Config(format!(
            "need 1 ≤ M ≤ d/4, got M = {m}, d = {d}"
        )));
    }
    let seeds = SeedTree::new(seed);
    let results = map_range(exec, n, |i| {
        let inst = Theorem2Instance::random(
            d,
            m,
            eps,
            alpha_scale,
            &mut seeds.stream("theorem2", i as u64),
        )?;
        verify_theorem2(&inst).map(|o| (o, inst.alpha))
    });
    let mut s = Theorem2Summary {
        instances: n,
        d,
        m,
        eps,
        alpha_scale,
        holds: 0,
        fails: 0,
        skipped: 0,
        counterexamples: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((o, _)) if o.holds => s.holds += 1,
            Ok((o, alpha)) => {
                s.fails += 1;
                s.counterexamples.push(Counterexample {
                    instance: i,
                    lhs_ratio: o.lhs_ratio,
                    rhs_max_ratio: o.rhs_max_ratio,
                    alpha,
                });
            }
            Err(AnalysisError::UndefinedMetric(_)) => s.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(s)
}
