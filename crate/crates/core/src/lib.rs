//! Sparse recovery through an imprecisely known, structured sensing matrix.
//!
//! The observation model is `y = (A + Σ_i e_i E_i) x + w` with known basis
//! matrices `E_i`, Gaussian coefficients `e_i ~ N(0, γ_e⁻¹)` and white noise
//! `w ~ N(0, γ_w⁻¹ I)`. The [`solver`] runs vector approximate message passing
//! in three flavors: on the exact matrix (oracle), on the nominal matrix while
//! ignoring the perturbation, and with a per-iteration correction that replaces
//! the signal-dependent noise covariance by its expectation and whitens it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoiser;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod solver;
pub mod whitening;

pub use denoiser::{BernoulliGaussianPrior, DenoiseOutput, Extrinsic};
pub use error::{Error, Result};
pub use model::{make_circulant, PerturbationModel, Problem};
pub use solver::{Mode, RunTrace, VampConfig, VampState};
pub use whitening::WhitenedModel;
