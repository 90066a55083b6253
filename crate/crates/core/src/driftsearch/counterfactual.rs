//! Counterfactual objective L = λ·ℓ_o(f̂(x′), y′) + ℓ_in(x, x′) and drifted
//! partial regeneration of counterfactual samples.

use serde::{Deserialize, Serialize};

use super::classifier::LogisticClassifier;
use crate::denoiser::Denoiser;
use crate::diffusion::{regenerate, DriftConfig, SampleBatch};
use crate::error::{Error, Result};
use crate::rng::StreamFactory;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeLoss {
    /// −log f̂(x′)_{y′}.
    #[default]
    CrossEntropy,
    /// ‖softmax(f̂(x′)) − onehot(y′)‖².
    Squared,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceLoss {
    /// Squared Euclidean distance.
    #[default]
    L2,
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSpec {
    pub lambda: f64,
    pub outcome_loss: OutcomeLoss,
    pub instance_loss: InstanceLoss,
    pub classifier: LogisticClassifier,
    pub desired_label: usize,
}

impl CounterfactualSpec {
    pub fn new(lambda: f64, classifier: LogisticClassifier, desired_label: usize) -> Result<Self> {
        let spec = Self {
            lambda,
            outcome_loss: OutcomeLoss::default(),
            instance_loss: InstanceLoss::default(),
            classifier,
            desired_label,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidRange(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.desired_label >= self.classifier.classes {
            return Err(Error::LabelOutOfRange {
                label: self.desired_label,
                classes: self.classifier.classes,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualLoss {
    pub total: f64,
    pub outcome_term: f64,
    pub instance_term: f64,
}

pub fn counterfactual_loss(
    x: &[f64],
    x_prime: &[f64],
    spec: &CounterfactualSpec,
) -> Result<CounterfactualLoss> {
    spec.validate()?;
    if x.len() != x_prime.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            got: x_prime.len(),
        });
    }
    if x_prime.len() != spec.classifier.dim {
        return Err(Error::DimMismatch {
            expected: spec.classifier.dim,
            got: x_prime.len(),
        });
    }
    let lp = spec.classifier.log_probs(x_prime);
    let y = spec.desired_label;
    let outcome_term = match spec.outcome_loss {
        OutcomeLoss::CrossEntropy => -lp[y],
        OutcomeLoss::Squared => lp
            .iter()
            .enumerate()
            .map(|(c, l)| {
                let r = l.exp() - if c == y { 1.0 } else { 0.0 };
                r * r
            })
            .sum(),
    };
    let instance_term = match spec.instance_loss {
        InstanceLoss::L2 => x.iter().zip(x_prime).map(|(a, b)| (a - b) * (a - b)).sum(),
        InstanceLoss::L1 => x.iter().zip(x_prime).map(|(a, b)| (a - b).abs()).sum(),
    };
    Ok(CounterfactualLoss {
        total: spec.lambda * outcome_term + instance_term,
        outcome_term,
        instance_term,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualBatch {
    pub x_prime: SampleBatch,
    pub losses: Vec<CounterfactualLoss>,
    /// Fraction of rows with f̂(x′) = y′.
    pub flip_rate: f64,
    /// Number of forward noising steps applied before regeneration.
    pub depth: usize,
}

impl CounterfactualBatch {
    pub fn mean_total(&self) -> f64 {
        self.losses.iter().map(|l| l.total).sum::<f64>() / self.losses.len() as f64
    }

    pub fn mean_outcome(&self) -> f64 {
        self.losses.iter().map(|l| l.outcome_term).sum::<f64>() / self.losses.len() as f64
    }

    pub fn mean_instance(&self) -> f64 {
        self.losses.iter().map(|l| l.instance_term).sum::<f64>() / self.losses.len() as f64
    }
}

/// Noising depth ⌈strength·T⌉, at least one step.
pub fn regeneration_depth(strength: f64, steps: usize) -> Result<usize> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::InvalidRange(format!(
            "strength must lie in (0, 1], got {strength}"
        )));
    }
    Ok(((strength * steps as f64).ceil() as usize).clamp(1, steps))
}

/// Regenerates each row of `x` under the desired label: forward-noise to depth
/// ⌈strength·T⌉, then run the drifted conditional reverse chain.
#[allow(clippy::too_many_arguments)]
pub fn generate_counterfactual(
    x: &SampleBatch,
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    spec: &CounterfactualSpec,
    drift: &DriftConfig,
    strength: f64,
    seed: u64,
) -> Result<CounterfactualBatch> {
    spec.validate()?;
    let depth = regeneration_depth(strength, s.steps())?;
    let streams = StreamFactory::new(seed);
    let x_prime = regenerate(x, depth, model, s, drift, spec.desired_label, &streams)?;
    let losses = x
        .rows()
        .zip(x_prime.rows())
        .map(|(a, b)| counterfactual_loss(a, b, spec))
        .collect::<Result<Vec<_>>>()?;
    let flips = x_prime
        .rows()
        .filter(|r| spec.classifier.predict(r) == spec.desired_label)
        .count();
    Ok(CounterfactualBatch {
        flip_rate: flips as f64 / x.len() as f64,
        x_prime,
        losses,
        depth,
    })
}
