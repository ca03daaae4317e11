//! Differentiation machinery.
//!
//! Parameter gradients come from the reverse-mode [`Tape`]. Derivatives of
//! the main network with respect to its inputs are propagated forward as
//! jets (value, first and second directional derivatives) whose components
//! are themselves tape nodes, so the reverse sweep differentiates through
//! them. [`DualValue`] is the tape-free scalar form of the same jets.

mod dual;
mod tape;

pub use dual::DualValue;
pub use tape::{grad, AdError, Tape, Var};
