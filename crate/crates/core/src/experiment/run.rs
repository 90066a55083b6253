//! Dispatch from a manifest to an experiment kind, and the staged sink that
//! writes its artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{
    BackendConfig, CounterfactualRunSpec, ExperimentConfig, ExperimentSpec, FinetuneProtocol,
    FinetuneSpec, GridSpec, SampleSpec, SamplerSpec, SearchSpec, SweepSpec, TargetSpec,
};
use super::formats::{
    batch_csv, counterfactual_losses_csv, distance_csv, fmt_f64, grid_report_csv, parse_batch_csv,
    trajectory_csv, trajectory_jsonl,
};
use super::manifest::{
    is_plain_file_name, run_id, sha256_hex, ArtifactKind, ArtifactRecord, ExperimentResult,
    RunManifest, RESULT_FORMAT,
};
use crate::denoiser::{
    train_denoiser, AnalyticDenoiser, DataSource, Denoiser, GaussianMixtureSpec, MlpDenoiser,
};
use crate::diffusion::{ddim_sample, sample, uniform_subgrid, DriftConfig, SampleBatch};
use crate::driftsearch::{
    generate_counterfactual, grid_search_by, grid_search_delta, CounterfactualSpec,
    GridSearchConfig, GridSearchReport, LogisticClassifier,
};
use crate::error::{Error, Result};
use crate::metrics::{l1_distance_with, mmd_distance, DistanceEstimate, EmpiricalDist, L1Options};
use crate::rng::{domain, Stream, StreamFactory};
use crate::schedule::NoiseSchedule;

/// Where a run writes. In directory form artifacts keep their base names
/// (`batch.csv`, `manifest.json`, ..). In file form (`--out batch.csv`) the
/// primary artifact takes the given name and everything else is prefixed with
/// its stem (`batch.manifest.json`, `batch.trajectory.csv`, ..).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputLayout {
    dir: PathBuf,
    stem: Option<String>,
}

impl OutputLayout {
    pub fn dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            stem: None,
        }
    }

    pub fn file(path: &Path) -> Result<Self> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                Error::InvalidRange(format!("cannot use {} as an output file", path.display()))
            })?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Ok(Self {
            dir: dir.to_path_buf(),
            stem: Some(stem.to_string()),
        })
    }

    pub fn directory(&self) -> &Path {
        &self.dir
    }

    fn name(&self, base: &str, primary: bool) -> String {
        match &self.stem {
            None => base.to_string(),
            Some(stem) if primary => {
                let ext = Path::new(base)
                    .extension()
                    .and_then(|e| e.to_str())
                    .unwrap_or("csv");
                format!("{stem}.{ext}")
            }
            Some(stem) => format!("{stem}.{base}"),
        }
    }

    pub fn manifest_name(&self) -> String {
        self.name("manifest.json", false)
    }

    pub fn result_name(&self) -> String {
        self.name("result.json", false)
    }

    pub fn result_path(&self) -> PathBuf {
        self.dir.join(self.result_name())
    }
}

struct Pending {
    kind: ArtifactKind,
    base: String,
    bytes: Vec<u8>,
    primary: bool,
}

/// Artifacts and summary metrics of one run, held in memory until the sink
/// writes them.
#[derive(Default)]
struct Outputs {
    files: Vec<Pending>,
    summary: BTreeMap<String, f64>,
}

impl Outputs {
    fn add(&mut self, kind: ArtifactKind, base: impl Into<String>, bytes: Vec<u8>) {
        self.files.push(Pending {
            kind,
            base: base.into(),
            bytes,
            primary: false,
        });
    }

    fn primary(&mut self, kind: ArtifactKind, base: impl Into<String>, bytes: Vec<u8>) {
        self.files.push(Pending {
            kind,
            base: base.into(),
            bytes,
            primary: true,
        });
    }

    fn set(&mut self, key: impl Into<String>, value: f64) {
        // JSON has no NaN or infinity
        if value.is_finite() {
            self.summary.insert(key.into(), value);
        }
    }

    fn set_estimate(&mut self, key: &str, d: &DistanceEstimate) {
        self.set(key, d.value);
        self.set(format!("{key}_se"), d.std_error);
    }
}

/// Runs the experiment a manifest describes and writes its artifacts, the
/// manifest and a result file under `layout`.
///
/// Nothing is written until every artifact has been computed. Files are
/// staged in a hidden directory and moved into place at the end; on any
/// failure the staged and already-moved files are removed.
pub fn run_experiment(manifest: &RunManifest, layout: &OutputLayout) -> Result<ExperimentResult> {
    let cfg = &manifest.config;
    cfg.validate()?;
    if manifest.run_id != run_id(cfg) {
        return Err(Error::schema("run_id", "run_id does not match the config"));
    }
    let out = execute(cfg, &manifest.run_id)?;
    persist(manifest, layout, out)
}

fn execute(cfg: &ExperimentConfig, run_id: &str) -> Result<Outputs> {
    let s = cfg.schedule.build()?;
    let mut out = Outputs::default();
    match &cfg.experiment {
        ExperimentSpec::Sample(spec) => run_sample(cfg, &s, spec, run_id, &mut out)?,
        ExperimentSpec::SweepDrift(spec) => run_sweep(cfg, &s, spec, run_id, &mut out)?,
        ExperimentSpec::GridSearch(spec) => run_grid(cfg, &s, spec, run_id, &mut out)?,
        ExperimentSpec::Finetune(spec) => run_finetune(cfg, &s, spec, run_id, &mut out)?,
        ExperimentSpec::Counterfactual(spec) => {
            run_counterfactual(cfg, &s, spec, run_id, &mut out)?
        }
    }
    Ok(out)
}

fn persist(
    manifest: &RunManifest,
    layout: &OutputLayout,
    out: Outputs,
) -> Result<ExperimentResult> {
    let dir = layout.directory();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let staging = dir.join(format!(
        ".staging-{}-{}",
        &manifest.run_id[..16],
        std::process::id()
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;

    let staged = (|| -> Result<(ExperimentResult, Vec<String>)> {
        let mut names = Vec::new();
        let mut seen = BTreeSet::new();
        let mut write = |name: String, bytes: &[u8]| -> Result<String> {
            if !is_plain_file_name(&name) || !seen.insert(name.clone()) {
                return Err(Error::InvalidRange(format!(
                    "bad or duplicate artifact name {name:?}"
                )));
            }
            let p = staging.join(&name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            names.push(name.clone());
            Ok(name)
        };
        let mut artifacts = Vec::with_capacity(out.files.len());
        for f in &out.files {
            let path = write(layout.name(&f.base, f.primary), &f.bytes)?;
            artifacts.push(ArtifactRecord {
                kind: f.kind,
                path,
                sha256: sha256_hex(&f.bytes),
            });
        }
        let manifest_name = write(layout.manifest_name(), manifest.to_json().as_bytes())?;
        let result = ExperimentResult {
            format: RESULT_FORMAT.into(),
            kind: manifest.kind().into(),
            run_id: manifest.run_id.clone(),
            manifest: manifest_name,
            artifacts,
            summary: out.summary,
        };
        // the result goes last so a reader never sees it before its artifacts
        write(layout.result_name(), result.to_json().as_bytes())?;
        Ok((result, names))
    })();
    let (result, names) = match staged {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    let mut moved: Vec<PathBuf> = Vec::new();
    for name in &names {
        let dest = dir.join(name);
        if let Err(e) = fs::rename(staging.join(name), &dest) {
            for p in &moved {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_dir_all(&staging);
            return Err(Error::io(dest, e));
        }
        moved.push(dest);
    }
    fs::remove_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    Ok(result)
}

enum Model {
    Analytic(AnalyticDenoiser),
    Network(MlpDenoiser),
}

impl Model {
    fn as_dyn(&self) -> &dyn Denoiser {
        match self {
            Model::Analytic(m) => m,
            Model::Network(m) => m,
        }
    }
}

fn build_model(
    cfg: &ExperimentConfig,
    s: &NoiseSchedule,
    run_id: &str,
    out: &mut Outputs,
) -> Result<Model> {
    match &cfg.backend {
        BackendConfig::Analytic => Ok(Model::Analytic(AnalyticDenoiser::new(
            cfg.data.clone(),
            s.clone(),
        ))),
        BackendConfig::Network {
            checkpoint: Some(path),
            ..
        } => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let (net, ck) = MlpDenoiser::load(&text, cfg.data.dim(), cfg.data.num_classes())?;
            if net.steps() != s.steps() || ck.schedule_id != s.id() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained under schedule {} with T={}, config has {} with T={}",
                    ck.schedule_id,
                    net.steps(),
                    s.id(),
                    s.steps()
                )));
            }
            Ok(Model::Network(net))
        }
        BackendConfig::Network {
            train: Some(tc), ..
        } => {
            let (net, losses) = train_denoiser(&cfg.data, s, tc, None)?;
            let meta = serde_json::json!({ "run_id": run_id, "train": tc });
            out.add(
                ArtifactKind::Checkpoint,
                "checkpoint.json",
                net.to_checkpoint(&s.id(), meta).to_json().into_bytes(),
            );
            out.add(
                ArtifactKind::Report,
                "train_loss.csv",
                loss_csv(&[("train", &losses)]),
            );
            out.set("final_loss", tail_mean(&losses));
            Ok(Model::Network(net))
        }
        BackendConfig::Network { .. } => Err(Error::schema(
            "backend",
            "network backend needs `checkpoint` or `train`",
        )),
    }
}

/// `n` rows of class `class`.
pub fn draw_class(
    spec: &GaussianMixtureSpec,
    class: usize,
    n: usize,
    rng: &mut Stream,
) -> Result<SampleBatch> {
    if class >= spec.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: spec.num_classes(),
        });
    }
    let dim = spec.dim();
    let mut data = vec![0.0; n * dim];
    for row in data.chunks_exact_mut(dim) {
        spec.draw_into(class, rng, row);
    }
    SampleBatch::new(data, dim, vec![class; n])
}

fn l1_options(cfg: &ExperimentConfig, seed: u64) -> L1Options {
    L1Options {
        bins: cfg.metrics.bins,
        bootstrap: cfg.metrics.bootstrap,
        seed,
    }
}

fn head(b: &SampleBatch, n: usize) -> Result<EmpiricalDist> {
    let n = n.min(b.len());
    EmpiricalDist::new(b.data[..n * b.dim].to_vec(), b.dim)
}

fn distances(
    cfg: &ExperimentConfig,
    a: &SampleBatch,
    b: &SampleBatch,
    seed: u64,
) -> Result<Vec<DistanceEstimate>> {
    let l1 = l1_distance_with(
        &EmpiricalDist::from_batch(a)?,
        &EmpiricalDist::from_batch(b)?,
        &l1_options(cfg, seed),
    )?;
    let mmd = mmd_distance(
        &head(a, cfg.metrics.mmd_n)?,
        &head(b, cfg.metrics.mmd_n)?,
        cfg.metrics.mmd_bandwidth,
    )?;
    Ok(vec![l1, mmd])
}

/// Pooled mean, its standard error, and pooled population std over all coordinates.
fn pooled_moments(b: &SampleBatch) -> (f64, f64, f64) {
    let m = b.data.len() as f64;
    let mean = b.data.iter().sum::<f64>() / m;
    let var = b.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    (mean, var.sqrt() / m.sqrt(), var.sqrt())
}

fn summarize_batch(b: &SampleBatch, suffix: &str, out: &mut Outputs) {
    let (mean, se, sd) = pooled_moments(b);
    out.set(format!("mean{suffix}"), mean);
    out.set(format!("mean{suffix}_se"), se);
    out.set(format!("std{suffix}"), sd);
}

fn tail_mean(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return f64::NAN;
    }
    let k = (losses.len() / 10).max(1);
    losses[losses.len() - k..].iter().sum::<f64>() / k as f64
}

/// `phase,step,loss`
fn loss_csv(phases: &[(&str, &[f64])]) -> Vec<u8> {
    let mut text = String::from("phase,step,loss\n");
    for (phase, losses) in phases {
        for (k, l) in losses.iter().enumerate() {
            text.push_str(&format!("{phase},{k},{}\n", fmt_f64(*l)));
        }
    }
    text.into_bytes()
}

fn run_sample(
    cfg: &ExperimentConfig,
    s: &NoiseSchedule,
    spec: &SampleSpec,
    run_id: &str,
    out: &mut Outputs,
) -> Result<()> {
    let model = build_model(cfg, s, run_id, out)?;
    let prior = cfg.prior_spec();
    let streams = StreamFactory::new(cfg.seed);
    let (batch, traj) = match spec.sampler {
        SamplerSpec::Ancestral => sample(
            model.as_dyn(),
            s,
            &prior,
            &cfg.drift,
            spec.n,
            spec.class,
            &streams,
            spec.record,
        )?,
        SamplerSpec::Ddim { steps, eta } => {
            let grid = uniform_subgrid(s.steps(), steps);
            (
                ddim_sample(
                    model.as_dyn(),
                    s,
                    &prior,
                    &grid,
                    &cfg.drift,
                    eta,
                    spec.n,
                    spec.class,
                    &streams,
                )?,
                None,
            )
        }
    };
    out.primary(ArtifactKind::Batch, "batch.csv", batch_csv(&batch));
    if let Some(tr) = &traj {
        out.add(
            ArtifactKind::Trajectory,
            "trajectory.csv",
            trajectory_csv(tr),
        );
        out.add(
            ArtifactKind::Trajectory,
            "trajectory.jsonl",
            trajectory_jsonl(tr),
        );
    }
    out.set("n", spec.n as f64);
    out.set("delta", cfg.drift.delta);
    summarize_batch(&batch, "", out);
    if spec.compare_to_data {
        let reference = draw_class(
            &cfg.data,
            spec.class,
            spec.n,
            &mut streams.stream(domain::DATA, 0),
        )?;
        let d = distances(cfg, &batch, &reference, cfg.seed)?;
        out.set_estimate("l1", &d[0]);
        out.set_estimate("mmd", &d[1]);
        out.add(ArtifactKind::Report, "distances.csv", distance_csv(&d));
    }
    Ok(())
}

fn delta_label(delta: f64) -> String {
    format!("{delta:+.4}")
}

fn run_sweep(
    cfg: &ExperimentConfig,
    s: &NoiseSchedule,
    spec: &SweepSpec,
    run_id: &str,
    out: &mut Outputs,
) -> Result<()> {
    let model = build_model(cfg, s, run_id, out)?;
    let prior = cfg.prior_spec();
    let streams = StreamFactory::new(cfg.seed);
    let mut means = Vec::with_capacity(spec.grid.len());
    for (i, &delta) in spec.grid.iter().enumerate() {
        let drift = cfg.drift.with_delta(delta);
        let (batch, traj) = sample(
            model.as_dyn(),
            s,
            &prior,
            &drift,
            spec.n_per_point,
            spec.class,
            &streams,
            true,
        )?;
        let traj = traj.expect("recorded");
        let label = format!("{i:02}_delta{}", delta_label(delta));
        out.add(
            ArtifactKind::Batch,
            format!("batch_{label}.csv"),
            batch_csv(&batch),
        );
        out.add(
            ArtifactKind::Trajectory,
            format!("trajectory_{label}.csv"),
            trajectory_csv(&traj),
        );
        out.add(
            ArtifactKind::Trajectory,
            format!("trajectory_{label}.jsonl"),
            trajectory_jsonl(&traj),
        );
        summarize_batch(&batch, &format!("[{}]", delta_label(delta)), out);
        means.push(pooled_moments(&batch).0);
    }
    out.set("points", spec.grid.len() as f64);
    out.set(
        "monotone",
        f64::from(u8::from(means.windows(2).all(|w| w[0] < w[1]))),
    );
    Ok(())
}

fn load_target(spec: &TargetSpec, seed: u64) -> Result<SampleBatch> {
    match spec {
        TargetSpec::Mixture { spec, n, class } => draw_class(
            spec,
            *class,
            *n,
            &mut StreamFactory::new(seed).stream(domain::DATA, 1),
        ),
        TargetSpec::Csv { path } => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_batch_csv(&text)
        }
    }
}

fn summarize_report(r: &GridSearchReport, out: &mut Outputs) {
    out.set("delta_star", r.delta_star);
    out.set("ambiguity_flag", f64::from(u8::from(r.ambiguity_flag)));
    if let Some(p) = r.per_delta.iter().find(|p| p.delta == r.delta_star) {
        out.set_estimate("l1_star", &p.estimate);
    }
    if let Some(p) = r.per_delta.iter().find(|p| p.delta == 0.0) {
        out.set_estimate("l1_zero", &p.estimate);
    }
}

fn run_grid(
    cfg: &ExperimentConfig,
    s: &NoiseSchedule,
    spec: &GridSpec,
    run_id: &str,
    out: &mut Outputs,
) -> Result<()> {
    let model = build_model(cfg, s, run_id, out)?;
    let target = load_target(&spec.target, cfg.seed)?;
    let gcfg = GridSearchConfig::new(
        spec.grid.clone(),
        spec.n_per_point,
        EmpiricalDist::from_batch(&target)?,
        cfg.drift.mode,
        cfg.seed,
    )?
    .with_refinement(spec.refine)
    .with_class(spec.class)
    .with_prior(cfg.prior_spec())
    .with_l1(l1_options(cfg, cfg.seed));
    let report = grid_search_delta(model.as_dyn(), s, &gcfg)?;
    out.primary(ArtifactKind::Report, "report.csv", grid_report_csv(&report));
    summarize_report(&report, out);
    out.set("unimodal", f64::from(u8::from(report.is_unimodal())));
    Ok(())
}

struct Replicate {
    net: MlpDenoiser,
    pre_losses: Vec<f64>,
    ft_losses: Vec<f64>,
    report: Option<GridSearchReport>,
    delta: f64,
    generated: SampleBatch,
    l1: DistanceEstimate,
}

fn finetune_replicate(
    cfg: &ExperimentConfig,
    s: &NoiseSchedule,
    spec: &FinetuneSpec,
    r: u64,
) -> Result<Replicate> {
    let rep = StreamFactory::new(cfg.seed).child(domain::REPLICATE, r);
    let prior = cfg.prior_spec();
    let mode = cfg.drift.mode;
    let search = |model: &dyn Denoiser, sr: &SearchSpec| -> Result<GridSearchReport> {
        let target = draw_class(
            &spec.target,
            spec.class,
            sr.target_n,
            &mut rep.stream(domain::DATA, 1),
        )?;
        let seed = rep.child(domain::SAMPLE, 1).root();
        let g = GridSearchConfig::new(
            sr.grid.clone(),
            sr.n_per_point,
            EmpiricalDist::from_batch(&target)?,
            mode,
            seed,
        )?
        .with_refinement(sr.refine)
        .with_class(spec.class)
        .with_prior(prior)
        .with_l1(l1_options(cfg, seed));
        grid_search_delta(model, s, &g)
    };

    let mut pre_cfg = spec.pretrain.clone();
    pre_cfg.seed = rep.child(domain::PRETRAIN, spec.pretrain.seed).root();
    let (pre, pre_losses) = train_denoiser(&cfg.data, s, &pre_cfg, None)?;
    let mut ft_cfg = spec.finetune.clone();
    ft_cfg.seed = rep.child(domain::FINETUNE, spec.finetune.seed).root();

    let (net, ft_losses, report) = match (spec.protocol, &spec.search) {
        (FinetuneProtocol::TrainAndInfer, Some(sr)) => {
            let report = search(&pre, sr)?;
            ft_cfg.drift = DriftConfig::new(report.delta_star, mode).in_training();
            let (net, losses) = train_denoiser(&spec.target, s, &ft_cfg, Some(pre))?;
            (net, losses, Some(report))
        }
        (_, sr) => {
            let (net, losses) = train_denoiser(&spec.target, s, &ft_cfg, Some(pre))?;
            let report = sr.as_ref().map(|sr| search(&net, sr)).transpose()?;
            (net, losses, report)
        }
    };
    let delta = report.as_ref().map_or(cfg.drift.delta, |r| r.delta_star);
    let drift = DriftConfig::new(delta, mode);
    let eval_target = draw_class(
        &spec.target,
        spec.class,
        spec.eval_n,
        &mut rep.stream(domain::DATA, 2),
    )?;
    let (generated, _) = sample(
        &net,
        s,
        &prior,
        &drift,
        spec.eval_n,
        spec.class,
        &rep.child(domain::EVAL, 0),
        false,
    )?;
    let l1 = l1_distance_with(
        &EmpiricalDist::from_batch(&generated)?,
        &EmpiricalDist::from_batch(&eval_target)?,
        &l1_options(cfg, rep.root()),
    )?;
    Ok(Replicate {
        net,
        pre_losses,
        ft_losses,
        report,
        delta,
        generated,
        l1,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_finetune(
    cfg: &ExperimentConfig,
    s: &NoiseSchedule,
    spec: &FinetuneSpec,
    run_id: &str,
    out: &mut Outputs,
) -> Result<()> {
    let reps = (0..spec.replicates as u64)
        .map(|r| finetune_replicate(cfg, s, spec, r))
        .collect::<Result<Vec<_>>>()?;
    for (r, rep) in reps.iter().enumerate() {
        let meta = serde_json::json!({
            "run_id": run_id,
            "replicate": r,
            "pretrain": spec.pretrain,
            "finetune": spec.finetune,
            "delta": rep.delta,
        });
        out.add(
            ArtifactKind::Checkpoint,
            format!("checkpoint_r{r}.json"),
            rep.net.to_checkpoint(&s.id(), meta).to_json().into_bytes(),
        );
        out.add(
            ArtifactKind::Batch,
            format!("batch_r{r}.csv"),
            batch_csv(&rep.generated),
        );
        out.add(
            ArtifactKind::Report,
            format!("train_loss_r{r}.csv"),
            loss_csv(&[("pretrain", &rep.pre_losses), ("finetune", &rep.ft_losses)]),
        );
        if let Some(report) = &rep.report {
            out.add(
                ArtifactKind::Report,
                format!("report_r{r}.csv"),
                grid_report_csv(report),
            );
        }
        out.set_estimate(&format!("l1_r{r}"), &rep.l1);
        out.set(format!("delta_r{r}"), rep.delta);
        out.set(format!("final_loss_r{r}"), tail_mean(&rep.ft_losses));
    }
    let l1: Vec<f64> = reps.iter().map(|r| r.l1.value).collect();
    let k = reps.len() as f64;
    out.set("replicates", k);
    out.set("l1_median", median(&l1));
    out.set("l1_mean", l1.iter().sum::<f64>() / k);
    // sampling error of the mean given the trained models
    out.set(
        "l1_mean_se",
        reps.iter()
            .map(|r| r.l1.std_error.powi(2))
            .sum::<f64>()
            .sqrt()
            / k,
    );
    out.set("delta_mean", reps.iter().map(|r| r.delta).sum::<f64>() / k);
    out.set(
        "final_loss_mean",
        reps.iter().map(|r| tail_mean(&r.ft_losses)).sum::<f64>() / k,
    );
    Ok(())
}

fn run_counterfactual(
    cfg: &ExperimentConfig,
    s: &NoiseSchedule,
    spec: &CounterfactualRunSpec,
    run_id: &str,
    out: &mut Outputs,
) -> Result<()> {
    let model = build_model(cfg, s, run_id, out)?;
    let root = StreamFactory::new(cfg.seed);
    let classes = cfg.data.num_classes();

    let (train_x, train_y) = DataSource::draw(
        &cfg.data,
        spec.classifier.train_n,
        &mut root.stream(domain::CLASSIFIER, 0),
    );
    let train = SampleBatch::new(train_x, cfg.data.dim(), train_y)?;
    let classifier = LogisticClassifier::fit(
        &train,
        classes,
        spec.classifier.steps,
        spec.classifier.learning_rate,
    )?;
    let (test_x, test_y) = DataSource::draw(
        &cfg.data,
        spec.classifier.train_n,
        &mut root.stream(domain::CLASSIFIER, 1),
    );
    out.set(
        "classifier_accuracy",
        classifier.accuracy(&SampleBatch::new(test_x, cfg.data.dim(), test_y)?),
    );

    let mut cf_spec = CounterfactualSpec::new(spec.lambda, classifier, spec.target_label)?;
    cf_spec.outcome_loss = spec.outcome_loss;
    cf_spec.instance_loss = spec.instance_loss;
    let x = draw_class(
        &cfg.data,
        spec.source_class,
        spec.n,
        &mut root.stream(domain::DATA, 0),
    )?;
    let gen_seed = root.child(domain::COUNTERFACTUAL, 0).root();

    let delta = match &spec.search {
        None => cfg.drift.delta,
        Some(sr) => {
            let target = EmpiricalDist::from_batch(&draw_class(
                &cfg.data,
                spec.target_label,
                sr.target_n,
                &mut root.stream(domain::DATA, 1),
            )?)?;
            let probe = SampleBatch::new(
                x.data[..sr.n_per_point.min(x.len()) * x.dim].to_vec(),
                x.dim,
                x.condition[..sr.n_per_point.min(x.len())].to_vec(),
            )?;
            let search_seed = root.child(domain::COUNTERFACTUAL, 1).root();
            let opts = l1_options(cfg, search_seed);
            let report = grid_search_by(&sr.grid, sr.refine, |delta| {
                let drift = cfg.drift.with_delta(delta);
                let cf = generate_counterfactual(
                    &probe,
                    model.as_dyn(),
                    s,
                    &cf_spec,
                    &drift,
                    spec.strength,
                    search_seed,
                )?;
                l1_distance_with(&EmpiricalDist::from_batch(&cf.x_prime)?, &target, &opts)
            })?;
            out.add(
                ArtifactKind::Report,
                "search_report.csv",
                grid_report_csv(&report),
            );
            summarize_report(&report, out);
            report.delta_star
        }
    };
    let drift = cfg.drift.with_delta(delta);
    let cf = generate_counterfactual(
        &x,
        model.as_dyn(),
        s,
        &cf_spec,
        &drift,
        spec.strength,
        gen_seed,
    )?;
    let flipped: Vec<bool> = cf
        .x_prime
        .rows()
        .map(|r| cf_spec.classifier.predict(r) == spec.target_label)
        .collect();
    // full regeneration: the input is forgotten entirely
    let baseline = generate_counterfactual(
        &x,
        model.as_dyn(),
        s,
        &cf_spec,
        &DriftConfig::none(),
        1.0,
        gen_seed,
    )?;

    out.add(ArtifactKind::Batch, "input.csv", batch_csv(&x));
    out.primary(
        ArtifactKind::Batch,
        "counterfactual.csv",
        batch_csv(&cf.x_prime),
    );
    out.add(
        ArtifactKind::Report,
        "losses.csv",
        counterfactual_losses_csv(&cf, &flipped),
    );

    let n = cf.losses.len() as f64;
    let se = |f: &dyn Fn(usize) -> f64| {
        let m = (0..cf.losses.len()).map(f).sum::<f64>() / n;
        let var = (0..cf.losses.len())
            .map(|i| (f(i) - m).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (var / n).sqrt()
    };
    out.set("delta", delta);
    out.set("lambda", spec.lambda);
    out.set("depth", cf.depth as f64);
    out.set("flip_rate", cf.flip_rate);
    out.set(
        "flip_rate_se",
        (cf.flip_rate * (1.0 - cf.flip_rate) / n).sqrt(),
    );
    out.set("mean_total", cf.mean_total());
    out.set("mean_total_se", se(&|i| cf.losses[i].total));
    out.set("mean_outcome", cf.mean_outcome());
    out.set("mean_outcome_se", se(&|i| cf.losses[i].outcome_term));
    out.set("mean_instance", cf.mean_instance());
    out.set("mean_instance_se", se(&|i| cf.losses[i].instance_term));
    out.set("baseline_flip_rate", baseline.flip_rate);
    out.set("baseline_instance", baseline.mean_instance());
    Ok(())
}
