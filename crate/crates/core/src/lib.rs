//! Plug-and-play proximal optimization with policy-driven parameter control.
//!
//! The crate implements six PnP-type iteration schemes (ADMM, PGM, APGM, HQS,
//! RED-ADMM, D-AMP) over three inverse imaging problems (compressed-sensing
//! MRI, quantized-Poisson single-photon imaging, coded-diffraction-pattern
//! phase retrieval), a family of parameter-selection policies (fixed,
//! handcrafted, fixed-optimal, greedy, oracle, learned), an actor-critic
//! training loop for the learned policy, and iteration-noise diagnostics.
//!
//! Everything is deterministic under explicit [`rng::Rng`] seeds and runs on
//! plain f64 tensors at desk scale.

pub mod env;
pub mod error;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod denoise;
pub mod diag;
pub mod micrograd;
pub mod phantom;
pub mod policy;
pub mod problems;
pub mod rng;
pub mod solver;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Dtype, Tensor};
