//! Reproducible experiments: versioned configs, manifests, artifact
//! persistence and run comparison.

pub mod compare;
pub mod config;
pub mod formats;
pub mod manifest;
pub mod presets;
pub mod run;

pub use compare::{compare_runs, normal_two_sided_p, CompareReport, CompareRow};
pub use config::{
    BackendConfig, ExperimentConfig, ExperimentSpec, FinetuneProtocol, MetricsConfig, SamplerSpec,
    SearchSpec, TargetSpec,
};
pub use formats::{parse_batch_csv, parse_delta_grid};
pub use manifest::{
    audit_dir, run_id, ArtifactKind, ArtifactRecord, AuditReport, ExperimentResult, RunManifest,
};
pub use run::{draw_class, run_experiment, OutputLayout};
