//! Versioned experiment configuration. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::denoiser::{GaussianMixtureSpec, TrainConfig};
use crate::diffusion::DriftConfig;
use crate::driftsearch::{default_grid, InstanceLoss, OutcomeLoss};
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_BINS, DEFAULT_BOOTSTRAP};
use crate::schedule::{PriorSpec, ScheduleConfig};

pub const CONFIG_VERSION: u32 = 1;

/// The δ values of the reference sweep figure.
pub fn sweep_grid() -> Vec<f64> {
    vec![-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Data distribution D_GT. The analytic backend is exact for it and the
    /// network backend trains on it.
    pub data: GaussianMixtureSpec,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub experiment: ExperimentSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub std: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    #[default]
    Analytic,
    /// A trained network: either loaded from `checkpoint` or trained on `data`
    /// with `train` before the experiment runs.
    Network {
        #[serde(default)]
        checkpoint: Option<PathBuf>,
        #[serde(default)]
        train: Option<TrainConfig>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "one")]
    pub mmd_bandwidth: f64,
    /// Subsample size for MMD, which is quadratic in N.
    #[serde(default = "default_mmd_n")]
    pub mmd_n: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            bootstrap: DEFAULT_BOOTSTRAP,
            mmd_bandwidth: 1.0,
            mmd_n: default_mmd_n(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec {
    #[default]
    Ancestral,
    Ddim {
        steps: usize,
        #[serde(default)]
        eta: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    Sample(SampleSpec),
    SweepDrift(SweepSpec),
    GridSearch(GridSpec),
    Finetune(FinetuneSpec),
    Counterfactual(CounterfactualRunSpec),
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::Sample(_) => "sample",
            ExperimentSpec::SweepDrift(_) => "sweep-drift",
            ExperimentSpec::GridSearch(_) => "grid-search",
            ExperimentSpec::Finetune(_) => "finetune",
            ExperimentSpec::Counterfactual(_) => "counterfactual",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub n: usize,
    #[serde(default)]
    pub class: usize,
    #[serde(default)]
    pub record: bool,
    #[serde(default)]
    pub sampler: SamplerSpec,
    /// Also write L1 and MMD against a fresh draw from `data`.
    #[serde(default)]
    pub compare_to_data: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "sweep_grid")]
    pub grid: Vec<f64>,
    pub n_per_point: usize,
    #[serde(default)]
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Draw `n` points of class `class` from a mixture.
    Mixture {
        spec: GaussianMixtureSpec,
        n: usize,
        #[serde(default)]
        class: usize,
    },
    /// A batch CSV on disk.
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    pub n_per_point: usize,
    #[serde(default)]
    pub class: usize,
    #[serde(default)]
    pub refine: bool,
    pub target: TargetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    pub n_per_point: usize,
    #[serde(default)]
    pub refine: bool,
    /// Size of the target draw the search compares against.
    pub target_n: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinetuneProtocol {
    /// Fine-tune without drift, then search δ on the fine-tuned model.
    #[default]
    InferenceSearch,
    /// Search δ on the pretrained model, fine-tune with drifted targets, then
    /// sample with the same δ.
    TrainAndInfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    pub target: GaussianMixtureSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    #[serde(default)]
    pub protocol: FinetuneProtocol,
    /// Without a search the run samples with the top-level `drift`.
    #[serde(default)]
    pub search: Option<SearchSpec>,
    pub eval_n: usize,
    /// Class label used for search and evaluation draws.
    #[serde(default)]
    pub class: usize,
    #[serde(default = "one_usize")]
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    #[serde(default = "default_classifier_n")]
    pub train_n: usize,
    #[serde(default = "default_classifier_steps")]
    pub steps: usize,
    #[serde(default = "default_classifier_lr")]
    pub learning_rate: f64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            train_n: default_classifier_n(),
            steps: default_classifier_steps(),
            learning_rate: default_classifier_lr(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualRunSpec {
    #[serde(default)]
    pub source_class: usize,
    pub target_label: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_strength")]
    pub strength: f64,
    #[serde(default)]
    pub outcome_loss: OutcomeLoss,
    #[serde(default)]
    pub instance_loss: InstanceLoss,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    /// Pick δ by L1 between counterfactuals and target-class data.
    #[serde(default)]
    pub search: Option<SearchSpec>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}

fn default_mmd_n() -> usize {
    2000
}

fn default_classifier_n() -> usize {
    4000
}

fn default_classifier_steps() -> usize {
    500
}

fn default_classifier_lr() -> f64 {
    0.5
}

fn default_strength() -> f64 {
    0.6
}

impl ExperimentConfig {
    /// Parses and validates a JSON config. Errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner().to_string();
            let mut path = e.path().to_string();
            // path_to_error already ends at an unknown key but stops short of a missing one
            if let Some(field) = quoted_field(&inner, "missing field `") {
                path = if path == "." || path.is_empty() {
                    field
                } else {
                    format!("{path}.{field}")
                };
            }
            Error::schema(path, inner)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn prior_spec(&self) -> PriorSpec {
        PriorSpec {
            mean: self.prior.mean,
            std: self.prior.std,
            dim: self.data.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::schema(
                "version",
                format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        self.schedule.build().map_err(at("schedule"))?;
        self.data.validate().map_err(at("data"))?;
        self.prior_spec().validate().map_err(at("prior"))?;
        self.drift.validate().map_err(at("drift"))?;
        if self.metrics.bins < 2 {
            return Err(Error::schema("metrics.bins", "need at least 2 bins"));
        }
        if !(self.metrics.mmd_bandwidth.is_finite() && self.metrics.mmd_bandwidth > 0.0) {
            return Err(Error::schema("metrics.mmd_bandwidth", "must be > 0"));
        }
        if let BackendConfig::Network { checkpoint, train } = &self.backend {
            if checkpoint.is_some() == train.is_some() {
                return Err(Error::schema(
                    "backend",
                    "network backend needs exactly one of `checkpoint` or `train`",
                ));
            }
            if let Some(t) = train {
                t.validate().map_err(at("backend.train"))?;
            }
        }
        let classes = self.data.num_classes();
        let class_ok = |path: &str, c: usize| {
            if c < classes {
                Ok(())
            } else {
                Err(Error::schema(
                    path,
                    format!("class {c} out of range for {classes} classes"),
                ))
            }
        };
        let grid_ok = |path: &str, g: &[f64]| {
            if g.is_empty()
                || g.iter().any(|d| !d.is_finite())
                || g.windows(2).any(|w| w[0] >= w[1])
            {
                Err(Error::schema(
                    path,
                    "grid must be non-empty, finite and strictly ascending",
                ))
            } else {
                Ok(())
            }
        };
        let positive = |path: &str, n: usize| {
            if n == 0 {
                Err(Error::schema(path, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        let search_ok = |path: &str, s: &SearchSpec| -> Result<()> {
            grid_ok(&format!("{path}.grid"), &s.grid)?;
            positive(&format!("{path}.n_per_point"), s.n_per_point)?;
            positive(&format!("{path}.target_n"), s.target_n)
        };
        match &self.experiment {
            ExperimentSpec::Sample(s) => {
                positive("experiment.n", s.n)?;
                class_ok("experiment.class", s.class)?;
                if let SamplerSpec::Ddim { steps, eta } = s.sampler {
                    if s.record {
                        return Err(Error::schema(
                            "experiment.record",
                            "trajectories are recorded by the ancestral sampler only",
                        ));
                    }
                    if steps == 0 || steps > self.schedule.steps {
                        return Err(Error::schema(
                            "experiment.sampler.steps",
                            "must lie in 1..=T",
                        ));
                    }
                    if !(0.0..=1.0).contains(&eta) {
                        return Err(Error::schema(
                            "experiment.sampler.eta",
                            "must lie in [0, 1]",
                        ));
                    }
                }
            }
            ExperimentSpec::SweepDrift(s) => {
                grid_ok("experiment.grid", &s.grid)?;
                positive("experiment.n_per_point", s.n_per_point)?;
                class_ok("experiment.class", s.class)?;
            }
            ExperimentSpec::GridSearch(s) => {
                grid_ok("experiment.grid", &s.grid)?;
                positive("experiment.n_per_point", s.n_per_point)?;
                class_ok("experiment.class", s.class)?;
                if let TargetSpec::Mixture { spec, n, class } = &s.target {
                    spec.validate().map_err(at("experiment.target.spec"))?;
                    positive("experiment.target.n", *n)?;
                    if *class >= spec.num_classes() || spec.dim() != self.data.dim() {
                        return Err(Error::schema(
                            "experiment.target",
                            "target class or dim does not match",
                        ));
                    }
                }
            }
            ExperimentSpec::Finetune(s) => {
                s.target.validate().map_err(at("experiment.target"))?;
                if s.target.dim() != self.data.dim() || s.target.num_classes() != classes {
                    return Err(Error::schema(
                        "experiment.target",
                        "target must match data dim and classes",
                    ));
                }
                s.pretrain.validate().map_err(at("experiment.pretrain"))?;
                s.finetune.validate().map_err(at("experiment.finetune"))?;
                positive("experiment.eval_n", s.eval_n)?;
                class_ok("experiment.class", s.class)?;
                positive("experiment.replicates", s.replicates)?;
                if let Some(search) = &s.search {
                    search_ok("experiment.search", search)?;
                }
                if s.protocol == FinetuneProtocol::TrainAndInfer && s.search.is_none() {
                    return Err(Error::schema(
                        "experiment.search",
                        "train-and-infer needs a search",
                    ));
                }
            }
            ExperimentSpec::Counterfactual(s) => {
                if classes < 2 {
                    return Err(Error::schema(
                        "data",
                        "counterfactuals need at least 2 classes",
                    ));
                }
                class_ok("experiment.source_class", s.source_class)?;
                class_ok("experiment.target_label", s.target_label)?;
                positive("experiment.n", s.n)?;
                positive("experiment.classifier.train_n", s.classifier.train_n)?;
                if !(s.lambda.is_finite() && s.lambda >= 0.0) {
                    return Err(Error::schema(
                        "experiment.lambda",
                        "must be finite and >= 0",
                    ));
                }
                if !(s.strength > 0.0 && s.strength <= 1.0) {
                    return Err(Error::schema("experiment.strength", "must lie in (0, 1]"));
                }
                if let Some(search) = &s.search {
                    search_ok("experiment.search", search)?;
                }
            }
        }
        Ok(())
    }
}

fn at(path: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::schema(path, e.to_string())
}

fn quoted_field(msg: &str, prefix: &str) -> Option<String> {
    let rest = &msg[msg.find(prefix)? + prefix.len()..];
    Some(rest[..rest.find('`')?].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "version": 1,
            "seed": 3,
            "schedule": {"T": 20, "beta_start": 1e-3, "beta_end": 0.3},
            "data": {"classes": [[{"weight": 1.0, "mean": [0.0], "var": [1.0]}]]},
            "experiment": {"kind": "sample", "n": 10}
        })
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(&minimal().to_string()).unwrap();
        assert_eq!(cfg.backend, BackendConfig::Analytic);
        assert_eq!(cfg.drift, DriftConfig::none());
        assert_eq!(cfg.metrics, MetricsConfig::default());
        assert_eq!(cfg.experiment.kind(), "sample");
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn missing_schedule_steps_names_the_path() {
        let mut v = minimal();
        v["schedule"].as_object_mut().unwrap().remove("T");
        match ExperimentConfig::from_json(&v.to_string()) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "schedule.T"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut v = minimal();
        v["schedule"]["warmup"] = 3.into();
        match ExperimentConfig::from_json(&v.to_string()) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "schedule.warmup"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v = minimal();
        v["experiment"]["bogus"] = true.into();
        assert!(matches!(
            ExperimentConfig::from_json(&v.to_string()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn semantic_errors_carry_paths() {
        let mut v = minimal();
        v["version"] = 2.into();
        assert!(
            matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Schema { path, .. }) if path == "version")
        );
        let mut v = minimal();
        v["experiment"]["class"] = 4.into();
        assert!(
            matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Schema { path, .. }) if path == "experiment.class")
        );
        let mut v = minimal();
        v["schedule"]["beta_end"] = 1.5.into();
        assert!(
            matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Schema { path, .. }) if path == "schedule")
        );
        let mut v = minimal();
        v["backend"] = serde_json::json!({"type": "network"});
        assert!(
            matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Schema { path, .. }) if path == "backend")
        );
    }

    #[test]
    fn garbage_is_a_schema_error() {
        for text in ["", "[]", "{", "{\"version\": \"one\"}", "null"] {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(Error::Schema { .. })),
                "{text}"
            );
        }
    }
}
