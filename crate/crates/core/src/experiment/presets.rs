//! Ready-made configs for each experiment kind. The CLI starts from these
//! when no `--config` is given.

use super::config::*;
use crate::denoiser::{Component, GaussianMixtureSpec, NetConfig, TrainConfig};
use crate::diffusion::{DriftConfig, DriftMode};
use crate::error::{Error, Result};
use crate::schedule::{ScheduleConfig, WeightMode};

pub const KINDS: [&str; 5] = [
    "sample",
    "sweep-drift",
    "grid-search",
    "finetune",
    "counterfactual",
];

/// T = 50 with β running up to 0.3, so that ᾱ_T ≈ 2e-4 and the N(0, 1)
/// prior matches the forward marginal.
pub fn desk_schedule() -> ScheduleConfig {
    ScheduleConfig::linear(50, 1e-3, 0.3)
}

/// Gentler than [`desk_schedule`] so that partial regeneration at moderate
/// strength still remembers the input; ᾱ_T ≈ 5e-3.
pub fn regeneration_schedule() -> ScheduleConfig {
    ScheduleConfig::linear(50, 1e-4, 0.2)
}

fn gaussian_1d(mean: f64, var: f64) -> GaussianMixtureSpec {
    GaussianMixtureSpec::gaussian(vec![mean], vec![var])
}

/// Two well separated 2-D Gaussian classes.
pub fn two_class_mixture() -> GaussianMixtureSpec {
    let class = |m: f64| {
        vec![Component {
            weight: 1.0,
            mean: vec![m, m],
            var: vec![0.25, 0.25],
        }]
    };
    GaussianMixtureSpec {
        classes: vec![class(-1.0), class(1.0)],
    }
}

fn base(experiment: ExperimentSpec, data: GaussianMixtureSpec) -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION,
        seed: 0,
        schedule: desk_schedule(),
        prior: PriorConfig::default(),
        data,
        backend: BackendConfig::Analytic,
        drift: DriftConfig::none(),
        metrics: MetricsConfig::default(),
        experiment,
    }
}

fn train(steps: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 128,
        learning_rate,
        weight_mode: WeightMode::Uniform,
        drift: DriftConfig::none(),
        seed: 0,
        net: NetConfig::default(),
    }
}

pub fn preset(kind: &str) -> Result<ExperimentConfig> {
    let cfg = match kind {
        "sample" => base(
            ExperimentSpec::Sample(SampleSpec {
                n: 1000,
                class: 0,
                record: false,
                sampler: SamplerSpec::Ancestral,
                compare_to_data: false,
            }),
            gaussian_1d(0.0, 1.0),
        ),
        "sweep-drift" => base(
            ExperimentSpec::SweepDrift(SweepSpec {
                grid: sweep_grid(),
                n_per_point: 10_000,
                class: 0,
            }),
            gaussian_1d(0.0, 1.0),
        ),
        "grid-search" => base(
            ExperimentSpec::GridSearch(GridSpec {
                grid: crate::driftsearch::default_grid(),
                n_per_point: 2000,
                class: 0,
                refine: true,
                target: TargetSpec::Mixture {
                    spec: gaussian_1d(0.5, 1.0),
                    n: 10_000,
                    class: 0,
                },
            }),
            gaussian_1d(0.0, 1.0),
        ),
        "finetune" => {
            let mut cfg = base(
                ExperimentSpec::Finetune(FinetuneSpec {
                    target: gaussian_1d(0.5, 1.0),
                    pretrain: train(1500, 0.01),
                    finetune: train(60, 0.002),
                    protocol: FinetuneProtocol::InferenceSearch,
                    search: Some(SearchSpec {
                        grid: (0..11).map(|i| (i as f64 - 5.0) * 0.01).collect(),
                        n_per_point: 4000,
                        refine: true,
                        target_n: 20_000,
                    }),
                    eval_n: 20_000,
                    class: 0,
                    replicates: 5,
                }),
                gaussian_1d(0.0, 1.0),
            );
            cfg.drift = DriftConfig::new(0.0, DriftMode::PerStep);
            cfg
        }
        "counterfactual" => {
            let mut cfg = base(
                ExperimentSpec::Counterfactual(CounterfactualRunSpec {
                    source_class: 0,
                    target_label: 1,
                    n: 500,
                    lambda: 1.0,
                    strength: 0.5,
                    outcome_loss: crate::driftsearch::OutcomeLoss::CrossEntropy,
                    instance_loss: crate::driftsearch::InstanceLoss::L2,
                    classifier: ClassifierSpec::default(),
                    search: None,
                }),
                two_class_mixture(),
            );
            cfg.schedule = regeneration_schedule();
            cfg
        }
        other => {
            return Err(Error::schema(
                "experiment.kind",
                format!(
                    "unknown kind {other:?}; expected one of {}",
                    KINDS.join(", ")
                ),
            ))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
