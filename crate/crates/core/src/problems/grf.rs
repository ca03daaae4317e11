//! Zero-mean Gaussian random fields with a squared-exponential kernel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::ProblemError;

/// Kernel, grid and jitter schedule of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfSpec {
    pub length_scale: f64,
    pub grid: Vec<f64>,
    /// Wrap distances on the unit period (for periodic problems).
    pub periodic: bool,
    pub jitter_start: f64,
    pub jitter_max: f64,
}

impl GrfSpec {
    pub fn new(length_scale: f64, grid: Vec<f64>) -> Self {
        Self {
            length_scale,
            grid,
            periodic: false,
            jitter_start: 1e-10,
            jitter_max: 1e-6,
        }
    }

    pub fn periodic(mut self) -> Self {
        self.periodic = true;
        self
    }

    /// `exp(−Δ²/2l²)`; the periodic variant replaces `Δ` with `sin(πΔ)/π`,
    /// which agrees to leading order for small `Δ`.
    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = if self.periodic {
            (std::f64::consts::PI * (a - b)).sin() / std::f64::consts::PI
        } else {
            a - b
        };
        (-d * d / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        DMatrix::from_fn(n, n, |i, j| self.kernel(self.grid[i], self.grid[j]))
    }
}

/// Factorized field, ready for repeated draws.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    factor: DMatrix<f64>,
    /// Diagonal regularizer that made the factorization succeed.
    pub jitter: f64,
}

impl GrfSampler {
    /// Cholesky factor of `K + jitter I`, escalating the jitter ×10 from
    /// `jitter_start` up to `jitter_max`.
    pub fn new(spec: &GrfSpec) -> Result<Self, ProblemError> {
        if !(spec.length_scale > 0.0 && spec.jitter_start > 0.0) || spec.grid.is_empty() {
            return Err(ProblemError::Config(format!(
                "GRF needs a positive length scale and a grid (l = {}, {} points)",
                spec.length_scale,
                spec.grid.len()
            )));
        }
        let k = spec.covariance();
        let n = spec.grid.len();
        let mut jitter = spec.jitter_start;
        while jitter <= spec.jitter_max * (1.0 + 1e-12) {
            if let Some(ch) = (k.clone() + DMatrix::identity(n, n) * jitter).cholesky() {
                return Ok(Self {
                    factor: ch.l(),
                    jitter,
                });
            }
            jitter *= 10.0;
        }
        Err(ProblemError::Numerical(format!(
            "covariance not positive definite with jitter up to {}",
            spec.jitter_max
        )))
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.factor * z).iter().copied().collect()
    }
}

/// One draw of the field described by `spec`.
pub fn grf_sample<R: Rng + ?Sized>(spec: &GrfSpec, rng: &mut R) -> Result<Vec<f64>, ProblemError> {
    Ok(GrfSampler::new(spec)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn kernel_diagonal_is_one() {
        for spec in [
            GrfSpec::new(0.2, grid(5)),
            GrfSpec::new(2.5, grid(5)).periodic(),
        ] {
            for &x in &spec.grid {
                assert_eq!(spec.kernel(x, x), 1.0);
            }
        }
    }

    /// With `l = 100` the draw is close to `g0 + c x` where `c` has standard
    /// deviation `1 / l`, so the spread stays below `3 / l` almost always.
    #[test]
    fn long_correlation_gives_nearly_constant_draws() {
        let s = GrfSampler::new(&GrfSpec::new(100.0, grid(50))).unwrap();
        let trees = SeedTree::new(11);
        let mut ok = 0;
        for i in 0..200 {
            let g = s.sample(&mut trees.stream("grf", i));
            let (lo, hi) = g
                .iter()
                .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            if hi - lo < 0.03 {
                ok += 1;
            }
        }
        assert!(ok >= 196, "{ok}/200");
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let s = GrfSampler::new(&GrfSpec::new(0.2, grid(100))).unwrap();
        let a = s.sample(&mut SeedTree::new(5).stream("grf", 0));
        let b = s.sample(&mut SeedTree::new(5).stream("grf", 0));
        let c = s.sample(&mut SeedTree::new(6).stream("grf", 0));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_covariance_matches_kernel() {
        let spec = GrfSpec::new(0.2, grid(21));
        let s = GrfSampler::new(&spec).unwrap();
        let mut rng = SeedTree::new(7).stream("grf", 0);
        let draws: Vec<Vec<f64>> = (0..20_000).map(|_| s.sample(&mut rng)).collect();
        for (i, j) in [(0, 0), (0, 2), (5, 9), (10, 10), (3, 20)] {
            let emp = draws.iter().map(|d| d[i] * d[j]).sum::<f64>() / draws.len() as f64;
            let k = spec.kernel(spec.grid[i], spec.grid[j]);
            assert!((emp - k).abs() < 0.05, "({i},{j}): {emp} vs {k}");
        }
    }

    #[test]
    fn bad_specs_fail() {
        assert!(matches!(
            GrfSampler::new(&GrfSpec::new(0.0, grid(5))),
            Err(ProblemError::Config(_))
        ));
        let mut dup = GrfSpec::new(0.2, vec![0.3, 0.3, 0.3]);
        dup.jitter_start = 1e-30;
        dup.jitter_max = 1e-29;
        assert!(matches!(
            GrfSampler::new(&dup),
            Err(ProblemError::Numerical(_))
        ));
    }
}
