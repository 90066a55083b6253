//! A desk-scale laboratory for latent drift in denoising diffusion models.
//!
//! The drift δ is a signed scalar added to the prior draw and/or every
//! reverse-kernel mean (and optionally to the forward noise target during
//! training). The crate provides the schedules, samplers and denoisers needed
//! to study it, Monte-Carlo distances to pick δ by grid search, the
//! counterfactual objective, and a reproducible experiment runner.

pub mod denoiser;
pub mod diffusion;
pub mod driftsearch;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
