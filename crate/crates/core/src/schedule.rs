//! Time discretization and per-step coefficients.
//!
//! Steps are 1-indexed: `t = 0` is clean data and `t = T` is the most noised
//! state. All accessors take 1-based indices.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reverse-kernel variance choice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// σ_t² = β_t.
    #[default]
    Beta,
    /// σ_t² = β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t), the forward-posterior variance.
    Posterior,
}

/// Per-step loss weights w_t.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum WeightMode {
    #[default]
    Uniform,
    /// Min-SNR-γ weighting for noise prediction: w_t = min(SNR_t, γ) / SNR_t.
    MinSnr { gamma: f64 },
}

/// Serializable schedule parameters (the run-manifest representation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub variance_mode: VarianceMode,
    #[serde(default)]
    pub weight_mode: WeightMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            variance_mode: VarianceMode::Beta,
            weight_mode: WeightMode::Uniform,
        }
    }
}

impl ScheduleConfig {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        Self {
            steps,
            beta_start,
            beta_end,
            ..Self::default()
        }
    }

    pub fn with_variance(mut self, mode: VarianceMode) -> Self {
        self.variance_mode = mode;
        self
    }

    pub fn with_weights(mut self, mode: WeightMode) -> Self {
        self.weight_mode = mode;
        self
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        let mut s = make_linear_schedule(self.steps, self.beta_start, self.beta_end)?;
        s.set_variance_mode(self.variance_mode);
        s.set_weight_mode(self.weight_mode)?;
        Ok(s)
    }
}

/// Immutable table of β_t, α_t, ᾱ_t, σ_t and w_t for t = 1..=T.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    weight: Vec<f64>,
}

/// Linear β from `beta_start` to `beta_end` inclusive, σ_t = √β_t, w_t = 1.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidRange("T must be at least 1".into()));
    }
    let ok = beta_start.is_finite()
        && beta_end.is_finite()
        && 0.0 < beta_start
        && beta_start <= beta_end
        && beta_end < 1.0;
    if !ok {
        return Err(Error::InvalidRange(format!(
            "need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )));
    }
    let beta: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        let last = (steps - 1) as f64;
        (0..steps)
            .map(|i| {
                if i == steps - 1 {
                    beta_end
                } else {
                    beta_start + span * (i as f64 / last)
                }
            })
            .collect()
    };
    let mut s = NoiseSchedule::from_betas_raw(beta);
    s.config = ScheduleConfig::linear(steps, beta_start, beta_end);
    Ok(s)
}

impl NoiseSchedule {
    fn from_betas_raw(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        let weight = vec![1.0; beta.len()];
        let config = ScheduleConfig {
            steps: beta.len(),
            beta_start: beta.first().copied().unwrap_or(0.0),
            beta_end: beta.last().copied().unwrap_or(0.0),
            ..ScheduleConfig::default()
        };
        Self {
            config,
            beta,
            alpha,
            alpha_bar,
            sigma,
            weight,
        }
    }

    /// All-zero β: the identity chain. Only for tests of zero-noise limits.
    #[cfg(test)]
    pub(crate) fn degenerate_identity(steps: usize) -> Self {
        Self::from_betas_raw(vec![0.0; steps])
    }

    fn set_variance_mode(&mut self, mode: VarianceMode) {
        self.config.variance_mode = mode;
        self.sigma = (1..=self.steps())
            .map(|t| match mode {
                VarianceMode::Beta => self.beta[t - 1].sqrt(),
                VarianceMode::Posterior => {
                    let ab = self.alpha_bar[t - 1];
                    let ab_prev = self.alpha_bar_or_one(t - 1);
                    (self.beta[t - 1] * (1.0 - ab_prev) / (1.0 - ab)).sqrt()
                }
            })
            .collect();
    }

    fn set_weight_mode(&mut self, mode: WeightMode) -> Result<()> {
        self.weight = self.loss_weights(mode)?;
        self.config.weight_mode = mode;
        Ok(())
    }

    /// Loss weights w_t under `mode` for this schedule's noise levels.
    pub fn loss_weights(&self, mode: WeightMode) -> Result<Vec<f64>> {
        match mode {
            WeightMode::Uniform => Ok(vec![1.0; self.steps()]),
            WeightMode::MinSnr { gamma } => {
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(Error::InvalidRange(format!(
                        "min-snr gamma must be > 0, got {gamma}"
                    )));
                }
                Ok(self
                    .alpha_bar
                    .iter()
                    .map(|&ab| {
                        let snr = ab / (1.0 - ab);
                        snr.min(gamma) / snr
                    })
                    .collect())
            }
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    /// Short content hash identifying this schedule in batches and checkpoints.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("schedule config serializes"));
        for b in &self.beta {
            h.update(b.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            Err(Error::IndexOutOfRange {
                index: t,
                max: self.steps(),
            })
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check(t)?])
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigma[self.check(t)?])
    }

    pub fn weight(&self, t: usize) -> Result<f64> {
        Ok(self.weight[self.check(t)?])
    }

    /// ᾱ_t with the convention ᾱ_0 = 1 (clean data).
    pub fn alpha_bar_or_one(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }
}

/// Standard-normal-shaped prior p(x_T) = N(mean, std²) per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub std: f64,
    #[serde(default = "one_usize")]
    pub dim: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl PriorSpec {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std.is_finite() && self.std > 0.0) || !self.mean.is_finite() {
            return Err(Error::InvalidRange(format!(
                "prior needs finite mean and std > 0, got mean={}, std={}",
                self.mean, self.std
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidRange("prior dim must be >= 1".into()));
        }
        Ok(())
    }
}
