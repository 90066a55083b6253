//! Conditional noise predictors ε̂_θ(x_t, t, c).

pub mod analytic;
pub mod gradcheck;
pub mod network;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use analytic::{analytic_predict, AnalyticDenoiser, Component, GaussianMixtureSpec};
pub use gradcheck::{grad_check, grad_check_with_step, Differentiable, GradCheckReport};
pub use network::{MlpDenoiser, NetConfig};
pub use train::{train_denoiser, DataSource, TrainBatch, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Analytic,
    Network,
}

/// A conditional noise predictor. Implementations must be safe for concurrent
/// read-only use.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn backend(&self) -> Backend;

    /// Writes ε̂(x_t, t, c) into `out` (length `dim`).
    fn predict_eps_into(&self, x_t: &[f64], t: usize, class: usize, out: &mut [f64]) -> Result<()>;

    fn predict_eps(&self, x_t: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.predict_eps_into(x_t, t, class, &mut out)?;
        Ok(out)
    }
}
