//! Exact noise prediction for Gaussian-mixture data with diagonal covariances.
//!
//! Under x_t = √ᾱ·x₀ + √(1−ᾱ)·ε with x₀ ~ Σ_k w_k N(m_k, diag v_k), the marginal
//! of x_t is Σ_k w_k N(√ᾱ·m_k, diag(ᾱ·v_k + 1 − ᾱ)). Component posteriors are
//! Gaussian, and the noise prediction of component k is
//!
//! ```text
//! ε̂_k = √(1−ᾱ) · (x_t − √ᾱ·m_k) / (ᾱ·v_k + 1 − ᾱ)
//! ```
//!
//! which is the ε that matches E[x₀ | x_t, k] and stays finite as ᾱ → 1. The
//! mixture prediction is Σ_k r_k(x_t)·ε̂_k with responsibilities r_k.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, Denoiser};
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub var: Vec<f64>,
}

/// Per-class Gaussian mixtures: `classes[c]` is the mixture for label `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureSpec {
    pub classes: Vec<Vec<Component>>,
}

impl GaussianMixtureSpec {
    pub fn new(classes: Vec<Vec<Component>>) -> Result<Self> {
        let spec = Self { classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim])
    }

    /// Single class, single component.
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self {
            classes: vec![vec![Component {
                weight: 1.0,
                mean,
                var,
            }]],
        }
    }

    /// One isotropic Gaussian per class in 1-D, e.g. `[(-2, 0.25), (2, 0.25)]`.
    pub fn one_dim_classes(params: &[(f64, f64)]) -> Self {
        Self {
            classes: params
                .iter()
                .map(|&(m, v)| {
                    vec![Component {
                        weight: 1.0,
                        mean: vec![m],
                        var: vec![v],
                    }]
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRange(m));
        if self.classes.is_empty() {
            return bad("mixture needs at least one class".into());
        }
        let dim = self.dim();
        if dim == 0 {
            return bad("mixture dim must be >= 1".into());
        }
        for (c, comps) in self.classes.iter().enumerate() {
            if comps.is_empty() {
                return bad(format!("class {c} has no components"));
            }
            let mut total = 0.0;
            for comp in comps {
                if comp.mean.len() != dim || comp.var.len() != dim {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        got: comp.mean.len().max(comp.var.len()),
                    });
                }
                if !(comp.weight.is_finite() && comp.weight >= 0.0) {
                    return bad(format!("class {c}: weight must be >= 0"));
                }
                if comp.var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return bad(format!("class {c}: variances must be > 0"));
                }
                if comp.mean.iter().any(|m| !m.is_finite()) {
                    return bad(format!("class {c}: means must be finite"));
                }
                total += comp.weight;
            }
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("class {c}: weights sum to {total}, expected 1"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.classes
            .first()
            .and_then(|c| c.first())
            .map_or(0, |c| c.mean.len())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Per-dimension mean and variance of class `c`.
    pub fn moments(&self, c: usize) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let mut mean = vec![0.0; dim];
        let mut second = vec![0.0; dim];
        for comp in &self.classes[c] {
            for d in 0..dim {
                mean[d] += comp.weight * comp.mean[d];
                second[d] += comp.weight * (comp.var[d] + comp.mean[d] * comp.mean[d]);
            }
        }
        let var = second.iter().zip(&mean).map(|(s, m)| s - m * m).collect();
        (mean, var)
    }

    /// Draws one row of class `c` into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, c: usize, rng: &mut R, out: &mut [f64]) {
        let comps = &self.classes[c];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = comps.len() - 1;
        for (k, comp) in comps.iter().enumerate() {
            acc += comp.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let comp = &comps[pick];
        for (d, v) in out.iter_mut().enumerate() {
            *v = comp.mean[d] + comp.var[d].sqrt() * rng::normal(rng);
        }
    }
}

/// Exact ε̂ for the noised mixture of class `class` at step `t`.
pub fn analytic_predict(
    spec: &GaussianMixtureSpec,
    x_t: &[f64],
    t: usize,
    class: usize,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x_t.len()];
    predict_into(spec, x_t, s.alpha_bar_at(t)?, class, &mut out)?;
    Ok(out)
}

/// Responsibilities r_k(x_t) of the class-`class` components at noise level ᾱ.
pub fn responsibilities(
    spec: &GaussianMixtureSpec,
    x_t: &[f64],
    alpha_bar: f64,
    class: usize,
) -> Vec<f64> {
    let sqrt_ab = alpha_bar.sqrt();
    let logs: Vec<f64> = spec.classes[class]
        .iter()
        .map(|comp| {
            let mut lp = comp.weight.ln();
            for d in 0..x_t.len() {
                let var = alpha_bar * comp.var[d] + (1.0 - alpha_bar);
                let r = x_t[d] - sqrt_ab * comp.mean[d];
                lp -= 0.5 * (r * r / var + var.ln());
            }
            lp
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn predict_into(
    spec: &GaussianMixtureSpec,
    x_t: &[f64],
    alpha_bar: f64,
    class: usize,
    out: &mut [f64],
) -> Result<()> {
    if class >= spec.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: spec.num_classes(),
        });
    }
    if x_t.len() != spec.dim() {
        return Err(Error::DimMismatch {
            expected: spec.dim(),
            got: x_t.len(),
        });
    }
    let sqrt_ab = alpha_bar.sqrt();
    let sqrt_1m = (1.0 - alpha_bar).sqrt();
    let comps = &spec.classes[class];
    out.iter_mut().for_each(|v| *v = 0.0);
    if comps.len() == 1 {
        let comp = &comps[0];
        for d in 0..x_t.len() {
            out[d] = sqrt_1m * (x_t[d] - sqrt_ab * comp.mean[d])
                / (alpha_bar * comp.var[d] + 1.0 - alpha_bar);
        }
        return Ok(());
    }
    let resp = responsibilities(spec, x_t, alpha_bar, class);
    for (comp, r) in comps.iter().zip(resp) {
        if r == 0.0 {
            continue;
        }
        for d in 0..x_t.len() {
            out[d] += r * sqrt_1m * (x_t[d] - sqrt_ab * comp.mean[d])
                / (alpha_bar * comp.var[d] + 1.0 - alpha_bar);
        }
    }
    Ok(())
}

/// The analytic oracle bound to a schedule.
#[derive(Clone, Debug)]
pub struct AnalyticDenoiser {
    spec: GaussianMixtureSpec,
    alpha_bar: Vec<f64>,
}

impl AnalyticDenoiser {
    pub fn new(spec: GaussianMixtureSpec, schedule: NoiseSchedule) -> Self {
        Self {
            spec,
            alpha_bar: schedule.alpha_bars().to_vec(),
        }
    }

    pub fn spec(&self) -> &GaussianMixtureSpec {
        &self.spec
    }
}

impl Denoiser for AnalyticDenoiser {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    fn backend(&self) -> Backend {
        Backend::Analytic
    }

    fn predict_eps_into(&self, x_t: &[f64], t: usize, class: usize, out: &mut [f64]) -> Result<()> {
        let ab = *self
            .alpha_bar
            .get(t.wrapping_sub(1))
            .ok_or(Error::IndexOutOfRange {
                index: t,
                max: self.alpha_bar.len(),
            })?;
        predict_into(&self.spec, x_t, ab, class, out)
    }
}
