//! Forward noising and drifted reverse sampling.
//!
//! The reverse kernel is N(μ_θ(x_t, t) + δ·1, σ_t² I), where μ_θ is rebuilt
//! from the denoiser's noise prediction with the usual posterior-mean formula
//!
//! ```text
//! μ_θ(x_t, t) = (x_t − β_t / √(1 − ᾱ_t) · ε̂) / √α_t
//! ```
//!
//! which equals c₀·x̂₀ + c_t·x_t with x̂₀ = (x_t − √(1 − ᾱ_t)·ε̂) / √ᾱ_t,
//! c₀ = √ᾱ_{t−1}·β_t / (1 − ᾱ_t) and c_t = √α_t·(1 − ᾱ_{t−1}) / (1 − ᾱ_t).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamFactory};
use crate::schedule::{NoiseSchedule, PriorSpec};

/// Where the drift δ enters the sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    /// Shift the prior draw z_T by δ only.
    PriorOnly,
    /// Add δ to every reverse-step mean.
    #[default]
    PerStep,
    /// Both of the above.
    Both,
}

impl DriftMode {
    pub fn shifts_prior(self) -> bool {
        matches!(self, DriftMode::PriorOnly | DriftMode::Both)
    }

    pub fn shifts_steps(self) -> bool {
        matches!(self, DriftMode::PerStep | DriftMode::Both)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub mode: DriftMode,
    /// Drift the forward-process noise target during training.
    #[serde(default)]
    pub apply_in_training: bool,
}

impl DriftConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(delta: f64, mode: DriftMode) -> Self {
        Self {
            delta,
            mode,
            apply_in_training: false,
        }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn in_training(self) -> Self {
        Self {
            apply_in_training: true,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() {
            return Err(Error::InvalidRange(format!(
                "drift delta must be finite, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    fn step_shift(&self) -> f64 {
        if self.mode.shifts_steps() {
            self.delta
        } else {
            0.0
        }
    }

    fn prior_shift(&self) -> f64 {
        if self.mode.shifts_prior() {
            self.delta
        } else {
            0.0
        }
    }
}

/// A row-major `n × dim` set of samples with one class label per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub data: Vec<f64>,
    pub dim: usize,
    pub condition: Vec<usize>,
    pub seed: u64,
    pub schedule_id: String,
}

impl SampleBatch {
    pub fn new(data: Vec<f64>, dim: usize, condition: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidRange("batch dim must be >= 1".into()));
        }
        if condition.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if data.len() != condition.len() * dim {
            return Err(Error::DimMismatch {
                expected: condition.len() * dim,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!(
                "non-finite value in batch row {}",
                i / dim
            )));
        }
        Ok(Self {
            data,
            dim,
            condition,
            seed: 0,
            schedule_id: String::new(),
        })
    }

    pub fn with_provenance(mut self, seed: u64, schedule_id: impl Into<String>) -> Self {
        self.seed = seed;
        self.schedule_id = schedule_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.condition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.condition.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Per-step summary statistics of a reverse run, ordered from t = T down to t = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<usize>,
    pub per_step_mean: Vec<f64>,
    pub per_step_std: Vec<f64>,
    pub terminal_latent_mean: f64,
    pub terminal_latent_std: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// x̂₀ implied by a noise prediction.
pub fn x0_from_eps(x_t: f64, eps: f64, alpha_bar: f64) -> f64 {
    (x_t - (1.0 - alpha_bar).sqrt() * eps) / alpha_bar.sqrt()
}

/// Noise prediction implied by an x̂₀ prediction.
pub fn eps_from_x0(x_t: f64, x0: f64, alpha_bar: f64) -> f64 {
    (x_t - alpha_bar.sqrt() * x0) / (1.0 - alpha_bar).sqrt()
}

/// Closed-form forward noising of a whole batch to step `t`.
///
/// Returns the noised batch and the regression target. With
/// `drift.apply_in_training` the target is ε + δ·1 and x_t is built from that
/// drifted noise.
pub fn forward_sample<R: Rng + ?Sized>(
    x0: &SampleBatch,
    t: usize,
    s: &NoiseSchedule,
    drift: &DriftConfig,
    rng: &mut R,
) -> Result<(SampleBatch, Vec<f64>)> {
    let ab = s.alpha_bar_at(t)?;
    let mut target = vec![0.0; x0.data.len()];
    let mut xt = x0.clone();
    for (i, x) in xt.data.iter_mut().enumerate() {
        let (xi, ei) = forward_one(*x, ab, drift, rng);
        *x = xi;
        target[i] = ei;
    }
    Ok((xt, target))
}

pub(crate) fn forward_one<R: Rng + ?Sized>(
    x0: f64,
    alpha_bar: f64,
    drift: &DriftConfig,
    rng: &mut R,
) -> (f64, f64) {
    let mut eps = rng::normal(rng);
    if drift.apply_in_training {
        eps += drift.delta;
    }
    (alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * eps, eps)
}

/// Coefficients of the ε-form posterior mean at step `t`.
#[derive(Clone, Copy, Debug)]
struct StepCoefs {
    eps_coef: f64,
    inv_sqrt_alpha: f64,
    sigma: f64,
}

impl StepCoefs {
    fn at(s: &NoiseSchedule, t: usize) -> Result<Self> {
        let beta = s.beta(t)?;
        let ab = s.alpha_bar_at(t)?;
        let eps_coef = if beta == 0.0 {
            0.0
        } else {
            beta / (1.0 - ab).sqrt()
        };
        Ok(Self {
            eps_coef,
            inv_sqrt_alpha: 1.0 / s.alpha(t)?.sqrt(),
            sigma: s.sigma(t)?,
        })
    }
}

fn mean_in_place(
    x: &mut [f64],
    t: usize,
    class: usize,
    model: &dyn Denoiser,
    coefs: StepCoefs,
    shift: f64,
    eps: &mut [f64],
) -> Result<()> {
    model.predict_eps_into(x, t, class, eps)?;
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::NumericFailure { step: t });
    }
    for (xi, &ei) in x.iter_mut().zip(eps.iter()) {
        *xi = (*xi - coefs.eps_coef * ei) * coefs.inv_sqrt_alpha + shift;
    }
    Ok(())
}

/// One ancestral step for a single sample, in place.
#[allow(clippy::too_many_arguments)]
fn reverse_step_one<R: Rng + ?Sized>(
    x: &mut [f64],
    t: usize,
    class: usize,
    model: &dyn Denoiser,
    coefs: StepCoefs,
    shift: f64,
    rng: &mut R,
    eps: &mut [f64],
) -> Result<()> {
    mean_in_place(x, t, class, model, coefs, shift, eps)?;
    if t > 1 {
        for xi in x.iter_mut() {
            *xi += coefs.sigma * rng::normal(rng);
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure { step: t });
    }
    Ok(())
}

/// One reverse transition x_t → x_{t−1} for every row of `xt`, drawing noise
/// row by row from a single stream.
pub fn reverse_step<R: Rng + ?Sized>(
    xt: &SampleBatch,
    t: usize,
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    drift: &DriftConfig,
    rng: &mut R,
) -> Result<SampleBatch> {
    check_model(model, xt.dim)?;
    let coefs = StepCoefs::at(s, t)?;
    let mut out = xt.clone();
    let mut eps = vec![0.0; xt.dim];
    for (row, &c) in out.data.chunks_exact_mut(xt.dim).zip(&xt.condition) {
        reverse_step_one(row, t, c, model, coefs, drift.step_shift(), rng, &mut eps)?;
    }
    Ok(out)
}

/// Mean of the drifted reverse kernel, (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + δ, for
/// every row of `xt`. This is [`reverse_step`] without the noise term.
pub fn reverse_mean(
    xt: &SampleBatch,
    t: usize,
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    drift: &DriftConfig,
) -> Result<SampleBatch> {
    check_model(model, xt.dim)?;
    let coefs = StepCoefs::at(s, t)?;
    let mut out = xt.clone();
    let mut eps = vec![0.0; xt.dim];
    for (row, &c) in out.data.chunks_exact_mut(xt.dim).zip(&xt.condition) {
        mean_in_place(row, t, c, model, coefs, drift.step_shift(), &mut eps)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure { step: t });
        }
    }
    Ok(out)
}

fn check_model(model: &dyn Denoiser, dim: usize) -> Result<()> {
    if model.dim() != dim {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            got: dim,
        });
    }
    Ok(())
}

fn check_class(model: &dyn Denoiser, class: usize) -> Result<()> {
    if class >= model.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: model.num_classes(),
        });
    }
    Ok(())
}

const CHUNK: usize = 64;

/// Per-chunk output: samples plus per-record sums for trajectory statistics.
struct ChunkOut {
    data: Vec<f64>,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

/// Run `n` independent chains in fixed-size chunks. Each chain `i` owns the
/// substream `(seed, "sample", i)`; chunk results are reduced in chunk order,
/// so the output is independent of thread count and scheduling.
fn run_chains<F>(
    n: usize,
    dim: usize,
    records: usize,
    chain: F,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    F: Fn(usize, &mut [f64], &mut dyn FnMut(usize, &[f64])) -> Result<()> + Sync,
{
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK)).collect();
    let outs: Vec<ChunkOut> = chunks
        .par_iter()
        .map(|&c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut out = ChunkOut {
                data: vec![0.0; (hi - lo) * dim],
                sum: vec![0.0; records],
                sumsq: vec![0.0; records],
            };
            for i in lo..hi {
                let row = &mut out.data[(i - lo) * dim..(i - lo + 1) * dim];
                let (sum, sumsq) = (&mut out.sum, &mut out.sumsq);
                let mut record = |k: usize, x: &[f64]| {
                    for &v in x {
                        sum[k] += v;
                        sumsq[k] += v * v;
                    }
                };
                chain(i, row, &mut record)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(n * dim);
    let mut sum = vec![0.0; records];
    let mut sumsq = vec![0.0; records];
    for o in outs {
        data.extend_from_slice(&o.data);
        for k in 0..records {
            sum[k] += o.sum[k];
            sumsq[k] += o.sumsq[k];
        }
    }
    Ok((data, sum, sumsq))
}

fn trajectory_from_sums(t: Vec<usize>, sum: &[f64], sumsq: &[f64], count: f64) -> Trajectory {
    let (mean, std): (Vec<f64>, Vec<f64>) = sum
        .iter()
        .zip(sumsq)
        .map(|(&s, &q)| {
            let m = s / count;
            (m, (q / count - m * m).max(0.0).sqrt())
        })
        .unzip();
    Trajectory {
        terminal_latent_mean: mean[0],
        terminal_latent_std: std[0],
        t,
        per_step_mean: mean,
        per_step_std: std,
    }
}

fn prior_draw<R: Rng + ?Sized>(prior: &PriorSpec, drift: &DriftConfig, rng: &mut R, x: &mut [f64]) {
    let shift = drift.prior_shift();
    for v in x.iter_mut() {
        *v = prior.mean + prior.std * rng::normal(rng) + shift;
    }
}

fn check_common(
    model: &dyn Denoiser,
    prior: &PriorSpec,
    drift: &DriftConfig,
    n: usize,
    cond: usize,
) -> Result<()> {
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    prior.validate()?;
    drift.validate()?;
    check_model(model, prior.dim)?;
    check_class(model, cond)
}

/// Ancestral sampling from t = T down to 1.
///
/// Sample `i` draws its prior and all step noise from the substream
/// `(streams, "sample", i)`, so any subset of indices can be regenerated alone
/// and identical noise is shared across drift values.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    prior: &PriorSpec,
    drift: &DriftConfig,
    n: usize,
    cond: usize,
    streams: &StreamFactory,
    record: bool,
) -> Result<(SampleBatch, Option<Trajectory>)> {
    check_common(model, prior, drift, n, cond)?;
    let steps = s.steps();
    let dim = prior.dim;
    let coefs: Vec<StepCoefs> = (1..=steps)
        .map(|t| StepCoefs::at(s, t))
        .collect::<Result<_>>()?;
    let records = if record { steps + 1 } else { 0 };
    let shift = drift.step_shift();
    let (data, sum, sumsq) = run_chains(n, dim, records, |i, x, rec| {
        let mut rng = streams.stream(domain::SAMPLE, i as u64);
        let mut eps = vec![0.0; dim];
        prior_draw(prior, drift, &mut rng, x);
        if record {
            rec(0, x);
        }
        for t in (1..=steps).rev() {
            reverse_step_one(x, t, cond, model, coefs[t - 1], shift, &mut rng, &mut eps)?;
            if record {
                rec(steps + 1 - t, x);
            }
        }
        Ok(())
    })?;
    let batch = SampleBatch {
        data,
        dim,
        condition: vec![cond; n],
        seed: streams.root(),
        schedule_id: s.id(),
    };
    let traj = record
        .then(|| trajectory_from_sums((0..=steps).rev().collect(), &sum, &sumsq, (n * dim) as f64));
    Ok((batch, traj))
}

/// Validates a DDIM timestep sub-grid: non-empty, strictly decreasing, within 1..=T.
pub fn validate_subgrid(subgrid: &[usize], steps: usize) -> Result<()> {
    if subgrid.is_empty() {
        return Err(Error::InvalidGrid("empty sub-grid".into()));
    }
    if let Some(&bad) = subgrid.iter().find(|&&t| t == 0 || t > steps) {
        return Err(Error::InvalidGrid(format!(
            "step {bad} outside 1..={steps}"
        )));
    }
    if subgrid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidGrid(
            "sub-grid must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Evenly spaced decreasing sub-grid of `k` steps ending at t = 1.
pub fn uniform_subgrid(steps: usize, k: usize) -> Vec<usize> {
    let k = k.clamp(1, steps);
    if k == 1 {
        return vec![steps];
    }
    let mut grid: Vec<usize> = (0..k)
        .map(|j| 1 + ((steps - 1) as f64 * j as f64 / (k - 1) as f64).round() as usize)
        .collect();
    grid.dedup();
    grid.reverse();
    grid
}

/// DDIM sampling over a decreasing sub-grid.
///
/// Each update goes from t to the next grid point t′ (or 0 after the last):
/// x_{t′} = √ᾱ_{t′}·x̂₀ + √(1 − ᾱ_{t′} − s²)·ε̂ + s·ξ + δ, with
/// s = η·√((1 − ᾱ_{t′}) / (1 − ᾱ_t))·√(1 − ᾱ_t / ᾱ_{t′}). With η = 0 the map is
/// deterministic given z_T.
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample(
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    prior: &PriorSpec,
    subgrid: &[usize],
    drift: &DriftConfig,
    eta: f64,
    n: usize,
    cond: usize,
    streams: &StreamFactory,
) -> Result<SampleBatch> {
    check_common(model, prior, drift, n, cond)?;
    validate_subgrid(subgrid, s.steps())?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidRange(format!(
            "eta must lie in [0, 1], got {eta}"
        )));
    }
    let dim = prior.dim;
    // (t, ᾱ_t, ᾱ_{t'}, s)
    let plan: Vec<(usize, f64, f64, f64)> = subgrid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let ab = s.alpha_bar_or_one(t);
            let ab_prev = subgrid.get(j + 1).map_or(1.0, |&tp| s.alpha_bar_or_one(tp));
            let sd = if eta == 0.0 || ab >= 1.0 {
                0.0
            } else {
                eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).max(0.0).sqrt()
            };
            (t, ab, ab_prev, sd)
        })
        .collect();
    let shift = drift.step_shift();
    let (data, _, _) = run_chains(n, dim, 0, |i, x, _| {
        let mut rng = streams.stream(domain::SAMPLE, i as u64);
        let mut eps = vec![0.0; dim];
        prior_draw(prior, drift, &mut rng, x);
        for &(t, ab, ab_prev, sd) in &plan {
            model.predict_eps_into(x, t, cond, &mut eps)?;
            if eps.iter().any(|e| !e.is_finite()) {
                return Err(Error::NumericFailure { step: t });
            }
            let dir = (1.0 - ab_prev - sd * sd).max(0.0).sqrt();
            for (xi, &ei) in x.iter_mut().zip(&eps) {
                let x0 = x0_from_eps(*xi, ei, ab);
                *xi = ab_prev.sqrt() * x0 + dir * ei + shift;
            }
            if sd > 0.0 {
                for xi in x.iter_mut() {
                    *xi += sd * rng::normal(&mut rng);
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure { step: t });
            }
        }
        Ok(())
    })?;
    Ok(SampleBatch {
        data,
        dim,
        condition: vec![cond; n],
        seed: streams.root(),
        schedule_id: s.id(),
    })
}

/// Partial regeneration: noise each row of `x` to step `depth`, then run the
/// conditional reverse chain from `depth` down to 1 under label `cond`.
/// Row `i` uses the substream `(streams, "counterfactual", i)`.
#[allow(clippy::too_many_arguments)]
pub fn regenerate(
    x: &SampleBatch,
    depth: usize,
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    drift: &DriftConfig,
    cond: usize,
    streams: &StreamFactory,
) -> Result<SampleBatch> {
    check_model(model, x.dim)?;
    check_class(model, cond)?;
    drift.validate()?;
    let ab_depth = s.alpha_bar_at(depth)?;
    let coefs: Vec<StepCoefs> = (1..=depth)
        .map(|t| StepCoefs::at(s, t))
        .collect::<Result<_>>()?;
    let dim = x.dim;
    let undrifted = DriftConfig::none();
    let (data, _, _) = run_chains(x.len(), dim, 0, |i, row, _| {
        let mut rng = streams.stream(domain::COUNTERFACTUAL, i as u64);
        let mut eps = vec![0.0; dim];
        for (v, &x0) in row.iter_mut().zip(x.row(i)) {
            *v = forward_one(x0, ab_depth, &undrifted, &mut rng).0 + drift.prior_shift();
        }
        for t in (1..=depth).rev() {
            reverse_step_one(
                row,
                t,
                cond,
                model,
                coefs[t - 1],
                drift.step_shift(),
                &mut rng,
                &mut eps,
            )?;
        }
        Ok(())
    })?;
    Ok(SampleBatch {
        data,
        dim,
        condition: vec![cond; x.len()],
        seed: streams.root(),
        schedule_id: s.id(),
    })
}
