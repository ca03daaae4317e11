//! Adam, step-decay schedules and global-norm clipping.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Updates applied so far.
    pub step: u64,
}

impl Adam {
    pub fn new(params: &[Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(
        &mut self,
        params: &mut [Array2<f64>],
        grads: &[Array2<f64>],
        lr: f64,
    ) -> Result<(), TrainError> {
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(TrainError::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.m[i].dim() {
                return Err(TrainError::Config(format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.dim(),
                    p.dim()
                )));
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(TrainError::NonFinite(format!(
                    "gradient of tensor {i} entry {bad} is {}",
                    g.iter().nth(bad).unwrap()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Whether the decay interval counts optimizer steps or epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayUnit {
    Step,
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub decay_unit: DecayUnit,
    /// No further decay past this many units.
    #[serde(default)]
    pub decay_horizon: Option<usize>,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(TrainError::Config(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(TrainError::Config(format!(
                "decay factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_interval == 0 {
            return Err(TrainError::Config("decay interval must be positive".into()));
        }
        Ok(())
    }
}

/// `lr0 · decay^⌊u / interval⌋`, with `u` the step or epoch index, capped
/// at the horizon.
pub fn lr_schedule(step: u64, steps_per_epoch: usize, s: &Schedule) -> f64 {
    let unit = match s.decay_unit {
        DecayUnit::Step => step,
        DecayUnit::Epoch => step / steps_per_epoch.max(1) as u64,
    };
    let unit = s.decay_horizon.map_or(unit, |h| unit.min(h as u64));
    s.lr0 * s.decay_factor.powi((unit / s.decay_interval as u64) as i32)
}

/// Rescales `grads` to global norm `max_norm` when it is exceeded; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * c));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn schedule() -> Schedule {
        Schedule {
            lr0: 0.0005,
            decay_factor: 0.8,
            decay_interval: 100,
            decay_unit: DecayUnit::Step,
            decay_horizon: None,
        }
    }

    #[test]
    fn schedule_examples() {
        let s = schedule();
        assert_eq!(lr_schedule(0, 1, &s), 0.0005);
        assert!((lr_schedule(100, 1, &s) - 0.0004).abs() < 1e-18);
        assert!((lr_schedule(250, 1, &s) - 0.00032).abs() < 1e-18);
        let capped = Schedule {
            decay_interval: 50,
            decay_unit: DecayUnit::Epoch,
            decay_horizon: Some(300),
            ..s
        };
        assert_eq!(
            lr_schedule(10 * 300, 10, &capped),
            lr_schedule(10 * 1000, 10, &capped)
        );
        assert!(lr_schedule(10 * 299, 10, &capped) > lr_schedule(10 * 300, 10, &capped));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![array![[1.0, -2.0]]];
        let before = p.clone();
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &[array![[0.0, 0.0]]], 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![array![[0.0]]];
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &[array![[1.0]]], 1e-3).unwrap();
        assert!((p[0][[0, 0]] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = vec![array![[0.0]]];
        let mut adam = Adam::new(&p);
        for _ in 0..200 {
            let g = array![[2.0 * (p[0][[0, 0]] - 3.0)]];
            adam.update(&mut p, &[g], 0.1).unwrap();
        }
        assert!((p[0][[0, 0]] - 3.0).abs() < 0.05, "{}", p[0][[0, 0]]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![array![[0.0]]];
        let mut adam = Adam::new(&p);
        assert!(matches!(
            adam.update(&mut p, &[array![[f64::NAN]]], 0.1),
            Err(TrainError::NonFinite(_))
        ));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![array![[3.0, 4.0]], array![[12.0]]];
        let n = clip_global_norm(&mut g, 10.0);
        assert_eq!(n, 13.0);
        let after = g
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((after - 10.0).abs() < 1e-12);
        let mut small = vec![array![[0.1]]];
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small[0][[0, 0]], 0.1);
    }
}
