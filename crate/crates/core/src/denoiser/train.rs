//! Weighted denoising objective and SGD-with-momentum training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::analytic::GaussianMixtureSpec;
use super::gradcheck::Differentiable;
use super::network::{MlpDenoiser, NetConfig};
use super::Denoiser;
use crate::diffusion::{forward_one, DriftConfig, SampleBatch};
use crate::error::{Error, Result};
use crate::rng::{domain, Stream, StreamFactory};
use crate::schedule::{NoiseSchedule, WeightMode};

pub const MOMENTUM: f64 = 0.9;

/// Anything that can hand out labelled training rows.
pub trait DataSource: Sync {
    fn dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Draws `n` rows (row-major) and their labels.
    fn draw(&self, n: usize, rng: &mut Stream) -> (Vec<f64>, Vec<usize>);
}

impl DataSource for GaussianMixtureSpec {
    fn dim(&self) -> usize {
        GaussianMixtureSpec::dim(self)
    }

    fn num_classes(&self) -> usize {
        GaussianMixtureSpec::num_classes(self)
    }

    /// Labels are uniform over classes.
    fn draw(&self, n: usize, rng: &mut Stream) -> (Vec<f64>, Vec<usize>) {
        let dim = GaussianMixtureSpec::dim(self);
        let mut data = vec![0.0; n * dim];
        let mut labels = Vec::with_capacity(n);
        for row in data.chunks_exact_mut(dim) {
            let c = rng.random_range(0..self.classes.len());
            self.draw_into(c, rng, row);
            labels.push(c);
        }
        (data, labels)
    }
}

/// Resamples rows of a fixed batch with replacement.
impl DataSource for SampleBatch {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.condition.iter().max().map_or(1, |m| m + 1)
    }

    fn draw(&self, n: usize, rng: &mut Stream) -> (Vec<f64>, Vec<usize>) {
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.random_range(0..self.len());
            data.extend_from_slice(self.row(i));
            labels.push(self.condition[i]);
        }
        (data, labels)
    }
}

/// Noised inputs with their regression targets and per-row loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub dim: usize,
    pub x_t: Vec<f64>,
    pub t: Vec<usize>,
    pub class: Vec<usize>,
    pub target: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_t(&self, i: usize) -> &[f64] {
        &self.x_t[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.target[i * self.dim..(i + 1) * self.dim]
    }

    /// Noises clean rows at uniformly drawn steps. The target is the (possibly
    /// drifted) noise that built x_t.
    pub fn noised(
        x0: &[f64],
        class: &[usize],
        dim: usize,
        s: &NoiseSchedule,
        weights: &[f64],
        drift: &DriftConfig,
        rng: &mut Stream,
    ) -> Self {
        let n = class.len();
        let mut b = TrainBatch {
            dim,
            x_t: vec![0.0; n * dim],
            t: Vec::with_capacity(n),
            class: class.to_vec(),
            target: vec![0.0; n * dim],
            weight: Vec::with_capacity(n),
        };
        for i in 0..n {
            let t = rng.random_range(1..=s.steps());
            let ab = s.alpha_bars()[t - 1];
            for d in 0..dim {
                let (x, e) = forward_one(x0[i * dim + d], ab, drift, rng);
                b.x_t[i * dim + d] = x;
                b.target[i * dim + d] = e;
            }
            b.t.push(t);
            b.weight.push(weights[t - 1]);
        }
        b
    }

    /// A fixed probe built from a sample batch, for gradient checks and
    /// oracle-loss comparisons.
    pub fn probe(samples: &SampleBatch, s: &NoiseSchedule, seed: u64) -> Self {
        let mut rng = StreamFactory::new(seed).stream(domain::FORWARD, 0);
        let w = s.weights().to_vec();
        Self::noised(
            &samples.data,
            &samples.condition,
            samples.dim,
            s,
            &w,
            &DriftConfig::none(),
            &mut rng,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 128,
            learning_rate: 0.02,
            weight_mode: WeightMode::Uniform,
            drift: DriftConfig::none(),
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidRange(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidRange("batch_size must be >= 1".into()));
        }
        self.drift.validate()
    }
}

/// Trains (or continues training) a network on `data` with the weighted
/// denoising loss. Step `k` draws its batch from the `(seed, "train", k)`
/// stream, so the run is a pure function of the config and `init`.
///
/// Returns the trained network and the per-step batch loss.
pub fn train_denoiser(
    data: &dyn DataSource,
    s: &NoiseSchedule,
    cfg: &TrainConfig,
    init: Option<MlpDenoiser>,
) -> Result<(MlpDenoiser, Vec<f64>)> {
    cfg.validate()?;
    let mut net = match init {
        Some(net) => net,
        None => MlpDenoiser::new(data.dim(), data.num_classes(), s.steps(), cfg.net, cfg.seed)?,
    };
    if net.dim() != data.dim() {
        return Err(Error::DimMismatch {
            expected: net.dim(),
            got: data.dim(),
        });
    }
    if net.steps() != s.steps() {
        return Err(Error::InvalidRange(format!(
            "network was built for T={} but schedule has T={}",
            net.steps(),
            s.steps()
        )));
    }
    if data.num_classes() > net.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: data.num_classes() - 1,
            classes: net.num_classes(),
        });
    }
    let weights = s.loss_weights(cfg.weight_mode)?;
    let streams = StreamFactory::new(cfg.seed);
    let mut velocity = vec![0.0; net.num_params()];
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = streams.stream(domain::TRAIN, step as u64);
        let (x0, class) = data.draw(cfg.batch_size, &mut rng);
        let batch = TrainBatch::noised(&x0, &class, data.dim(), s, &weights, &cfg.drift, &mut rng);
        let (loss, grad) = net.loss_and_grad(&batch);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        for ((p, v), g) in net
            .params_mut()
            .iter_mut()
            .zip(velocity.iter_mut())
            .zip(&grad)
        {
            *v = MOMENTUM * *v + g;
            *p -= cfg.learning_rate * *v;
        }
        curve.push(loss);
    }
    Ok((net, curve))
}
