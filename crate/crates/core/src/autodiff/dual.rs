//! Second-order forward-mode dual numbers along a single direction.

use std::ops::{Add, Mul, Neg, Sub};

use crate::nets::Activation;

/// Value with first and second derivative along one input axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualValue {
    pub primal: f64,
    pub tangent1: f64,
    pub tangent2: f64,
}

impl DualValue {
    pub fn constant(v: f64) -> Self {
        Self {
            primal: v,
            tangent1: 0.0,
            tangent2: 0.0,
        }
    }

    /// The seeded input variable: d/dx x = 1, d²/dx² x = 0.
    pub fn variable(v: f64) -> Self {
        Self {
            primal: v,
            tangent1: 1.0,
            tangent2: 0.0,
        }
    }

    /// Chain rule through a scalar function given its first three values
    /// `f(p)`, `f'(p)`, `f''(p)`.
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        Self {
            primal: f0,
            tangent1: f1 * self.tangent1,
            tangent2: f2 * self.tangent1 * self.tangent1 + f1 * self.tangent2,
        }
    }

    pub fn activate(self, act: Activation) -> Self {
        let z = self.primal;
        self.chain(
            act.derivative(0, z),
            act.derivative(1, z),
            act.derivative(2, z),
        )
    }

    pub fn scale(self, c: f64) -> Self {
        Self {
            primal: self.primal * c,
            tangent1: self.tangent1 * c,
            tangent2: self.tangent2 * c,
        }
    }
}

impl Add for DualValue {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            primal: self.primal + o.primal,
            tangent1: self.tangent1 + o.tangent1,
            tangent2: self.tangent2 + o.tangent2,
        }
    }
}

impl Sub for DualValue {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for DualValue {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul for DualValue {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            primal: self.primal * o.primal,
            tangent1: self.tangent1 * o.primal + self.primal * o.tangent1,
            tangent2: self.tangent2 * o.primal
                + 2.0 * self.tangent1 * o.tangent1
                + self.primal * o.tangent2,
        }
    }
}

impl std::iter::Sum for DualValue {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_have_zero_tangents() {
        let c = DualValue::constant(4.0);
        let x = DualValue::variable(2.0);
        let y = c * x * x;
        assert_eq!(
            y,
            DualValue {
                primal: 16.0,
                tangent1: 16.0,
                tangent2: 8.0
            }
        );
    }

    #[test]
    fn tanh_at_zero() {
        let y = DualValue::variable(0.0).activate(Activation::Tanh);
        assert_eq!(y.primal, 0.0);
        assert_eq!(y.tangent1, 1.0);
        assert_eq!(y.tangent2, 0.0);
    }

    #[test]
    fn sine_composition_matches_closed_form() {
        // d²/dx² sin(3x) = -9 sin(3x)
        let x = 0.37;
        let y = DualValue::variable(x).scale(3.0).activate(Activation::Sine);
        assert!((y.tangent1 - 3.0 * (3.0 * x).cos()).abs() < 1e-14);
        assert!((y.tangent2 + 9.0 * (3.0 * x).sin()).abs() < 1e-14);
    }
}
