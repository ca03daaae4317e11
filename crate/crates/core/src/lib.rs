//! Layered Fourier-reduced physics-informed neural operator.
//!
//! Per-layer hypernetworks map a discretized PDE parameter to a truncated
//! Fourier spectrum of each main-network layer; the main network is then
//! trained against a physics-informed loss over a family of parametric PDEs.
//!
//! Module map:
//!
//! - [`autodiff`]: matrix reverse-mode tape and second-order dual numbers
//! - [`nets`]: main network, activations, input-derivative jets
//! - [`hypernet`]: hypernetworks, spectral codec, parameter accounting
//! - [`physics`]: residual/boundary/initial operators and the loss
//! - [`problems`]: GRF sampling, reference solvers, dataset files
//! - [`training`]: Adam, schedules, pre-training and fine-tuning
//! - [`analysis`]: metrics and verification harnesses
//! - [`cli`]: the `lfr` command-line surface

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod hypernet;
pub mod nets;
pub mod par;
pub mod physics;
pub mod problems;
pub mod rng;
pub mod tensors;
pub mod training;

mod error;

pub use error::{Error, Result};
