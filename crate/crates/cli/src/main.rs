use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftlab::diffusion::DriftMode;
use driftlab::experiment::compare::ALPHA;
use driftlab::experiment::config::{ExperimentConfig, ExperimentSpec};
use driftlab::experiment::presets;
use driftlab::experiment::{
    audit_dir, compare_runs, parse_batch_csv, parse_delta_grid, run_experiment, ExperimentResult,
    OutputLayout, RunManifest,
};
use driftlab::metrics::{l1_distance_with, mmd_distance, moments_report, EmpiricalDist, L1Options};
use driftlab::Error;

#[derive(Parser)]
#[command(name = "driftlab", version, about = "Latent-drift diffusion experiments")]
struct Cli {
    /// Experiment config (JSON). Without it the built-in preset for the subcommand is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, or a `.csv` path for the primary artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a batch from the drifted sampler.
    Sample(SampleArgs),
    /// Sample once per δ on a grid, with trajectories.
    SweepDrift(SweepArgs),
    /// Pick δ by L1 distance to a target set.
    GridSearch(SearchArgs),
    /// Pretrain, fine-tune and evaluate a network, optionally with a δ search.
    Finetune(FinetuneArgs),
    /// Regenerate inputs under a desired label and score the counterfactuals.
    Counterfactual(CounterfactualArgs),
    /// Audit an output directory, or summarize a batch CSV.
    Report(ReportArgs),
    /// Tabulate metric differences between two runs.
    Compare(CompareArgs),
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<DriftMode>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    drift: DriftArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    class: Option<usize>,
    /// Also write the per-step trajectory.
    #[arg(long)]
    record: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    drift: DriftArgs,
    /// Comma-separated δ values, e.g. `--grid=-0.2,-0.1,0,0.1,0.2`.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Samples per δ.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    drift: DriftArgs,
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    refine: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    drift: DriftArgs,
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Evaluation sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Skip the δ search and sample with the configured drift.
    #[arg(long)]
    no_search: bool,
}

#[derive(Args)]
struct CounterfactualArgs {
    #[command(flatten)]
    drift: DriftArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    target_label: Option<usize>,
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// An output directory, a result file, or a batch CSV.
    path: PathBuf,
    /// With a batch CSV: a second batch to measure distances against.
    #[arg(long)]
    against: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Rows of each batch used for MMD, which is quadratic in N.
    #[arg(long, default_value_t = 2000)]
    mmd_n: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Result file or output directory of the baseline run.
    a: PathBuf,
    /// Result file or output directory of the other run.
    b: PathBuf,
}

fn parse_mode(s: &str) -> Result<DriftMode, String> {
    match s {
        "prior-only" => Ok(DriftMode::PriorOnly),
        "per-step" => Ok(DriftMode::PerStep),
        "both" => Ok(DriftMode::Both),
        _ => Err(format!("unknown mode {s:?} (prior-only, per-step, both)")),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_numeric() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> driftlab::Result<ExitCode> {
    let kind = match &cli.command {
        Command::Report(args) => return report(args, cli.out.as_deref()),
        Command::Compare(args) => return compare(args, cli.out.as_deref()),
        Command::Sample(_) => "sample",
        Command::SweepDrift(_) => "sweep-drift",
        Command::GridSearch(_) => "grid-search",
        Command::Finetune(_) => "finetune",
        Command::Counterfactual(_) => "counterfactual",
    };
    let mut cfg = load_config(cli.config.as_deref(), kind)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    apply_overrides(&mut cfg, &cli.command)?;
    cfg.validate()?;

    let manifest = RunManifest::new(cfg);
    let layout = match &cli.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => OutputLayout::file(p)?,
        Some(p) => OutputLayout::dir(p),
        None => OutputLayout::dir(format!("runs/{kind}-{}", &manifest.run_id[..12])),
    };
    let result = run_experiment(&manifest, &layout)?;
    println!("kind: {}", result.kind);
    println!("run_id: {}", result.run_id);
    println!("result: {}", layout.result_path().display());
    for (k, v) in &result.summary {
        println!("{k}: {v}");
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: Option<&Path>, kind: &str) -> driftlab::Result<ExperimentConfig> {
    let Some(path) = path else {
        return presets::preset(kind);
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg = ExperimentConfig::from_json(&text)?;
    if cfg.experiment.kind() != kind {
        return Err(Error::KindMismatch {
            a: kind.into(),
            b: cfg.experiment.kind().into(),
        });
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, cmd: &Command) -> driftlab::Result<()> {
    let drift = match cmd {
        Command::Sample(a) => &a.drift,
        Command::SweepDrift(a) => &a.drift,
        Command::GridSearch(a) => &a.drift,
        Command::Finetune(a) => &a.drift,
        Command::Counterfactual(a) => &a.drift,
        Command::Report(_) | Command::Compare(_) => return Ok(()),
    };
    if let Some(d) = drift.delta {
        cfg.drift.delta = d;
    }
    if let Some(m) = drift.mode {
        cfg.drift.mode = m;
    }
    let grid = |g: &Option<String>| g.as_deref().map(parse_delta_grid).transpose();
    match (cmd, &mut cfg.experiment) {
        (Command::Sample(a), ExperimentSpec::Sample(s)) => {
            s.n = a.n.unwrap_or(s.n);
            s.class = a.class.unwrap_or(s.class);
            s.record |= a.record;
        }
        (Command::SweepDrift(a), ExperimentSpec::SweepDrift(s)) => {
            if let Some(g) = grid(&a.grid)? {
                s.grid = g;
            }
            s.n_per_point = a.n.unwrap_or(s.n_per_point);
        }
        (Command::GridSearch(a), ExperimentSpec::GridSearch(s)) => {
            if let Some(g) = grid(&a.grid)? {
                s.grid = g;
            }
            s.n_per_point = a.n.unwrap_or(s.n_per_point);
            s.refine |= a.refine;
        }
        (Command::Finetune(a), ExperimentSpec::Finetune(s)) => {
            if let (Some(g), Some(search)) = (grid(&a.grid)?, s.search.as_mut()) {
                search.grid = g;
            }
            if a.no_search {
                s.search = None;
            }
            s.eval_n = a.n.unwrap_or(s.eval_n);
            s.replicates = a.replicates.unwrap_or(s.replicates);
        }
        (Command::Counterfactual(a), ExperimentSpec::Counterfactual(s)) => {
            s.lambda = a.lambda.unwrap_or(s.lambda);
            s.target_label = a.target_label.unwrap_or(s.target_label);
            s.strength = a.strength.unwrap_or(s.strength);
            s.n = a.n.unwrap_or(s.n);
        }
        _ => unreachable!("config kind checked in load_config"),
    }
    Ok(())
}

fn load_result(path: &Path) -> driftlab::Result<ExperimentResult> {
    if path.is_dir() {
        ExperimentResult::load(&path.join("result.json"))
    } else {
        ExperimentResult::load(path)
    }
}

fn write_or_print(out: Option<&Path>, bytes: &[u8]) -> driftlab::Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

fn report(args: &ReportArgs, out: Option<&Path>) -> driftlab::Result<ExitCode> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    if args.path.is_dir() {
        let audit = audit_dir(&args.path)?;
        println!("results: {}", audit.results);
        for (label, names) in [
            ("missing", &audit.missing),
            ("corrupted", &audit.corrupted),
            ("orphan", &audit.orphans),
        ] {
            for n in names {
                println!("{label}: {n}");
            }
        }
        println!("audit: {}", if audit.passed() { "ok" } else { "FAILED" });
        return Ok(if audit.passed() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }
    if args.path.extension().is_some_and(|e| e == "json") {
        let r = ExperimentResult::load(&args.path)?;
        println!("kind: {}\nrun_id: {}", r.kind, r.run_id);
        for (k, v) in &r.summary {
            println!("{k}: {v}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let a = parse_batch_csv(&read(&args.path)?)?;
    let da = EmpiricalDist::from_batch(&a)?;
    match &args.against {
        None => {
            let m = moments_report(&da)?;
            let text = serde_json::to_string_pretty(&m).expect("report serializes") + "\n";
            write_or_print(out, text.as_bytes())?;
        }
        Some(other) => {
            let db = EmpiricalDist::from_batch(&parse_batch_csv(&read(other)?)?)?;
            let opts = L1Options {
                bins: args.bins,
                ..L1Options::default()
            };
            let head = |d: &EmpiricalDist| {
                let n = args.mmd_n.min(d.len());
                EmpiricalDist::new(d.samples()[..n * d.dim()].to_vec(), d.dim())
            };
            let rows = vec![
                l1_distance_with(&da, &db, &opts)?,
                mmd_distance(&head(&da)?, &head(&db)?, args.bandwidth)?,
            ];
            write_or_print(out, &driftlab::experiment::formats::distance_csv(&rows))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(args: &CompareArgs, out: Option<&Path>) -> driftlab::Result<ExitCode> {
    let a = load_result(&args.a)?;
    let b = load_result(&args.b)?;
    let rep = compare_runs(&a, &b)?;
    write_or_print(out, &rep.to_csv())?;
    let significant: Vec<&str> = rep
        .rows
        .iter()
        .filter(|r| r.p_value.is_some_and(|p| p < ALPHA))
        .map(|r| r.metric.as_str())
        .collect();
    eprintln!(
        "{} metrics compared, {} significant at alpha={ALPHA}",
        rep.rows.len(),
        significant.len()
    );
    Ok(ExitCode::SUCCESS)
}
