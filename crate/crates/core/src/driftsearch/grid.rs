use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{sample, DriftConfig, DriftMode};
use crate::error::{Error, Result};
use crate::metrics::{l1_distance_with, DistanceEstimate, EmpiricalDist, L1Options};
use crate::rng::StreamFactory;
use crate::schedule::{NoiseSchedule, PriorSpec};

pub const MIN_POINTS_PER_DELTA: usize = 100;
pub const REFINE_POINTS: usize = 5;

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("empty drift grid".into()));
    }
    if grid.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidGrid(
            "drift grid values must be finite".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrid(
            "drift grid must be sorted ascending without repeats".into(),
        ));
    }
    Ok(())
}

/// Nine evenly spaced values over [−0.2, 0.2].
pub fn default_grid() -> Vec<f64> {
    (0..9).map(|i| (i as f64 - 4.0) * 0.05).collect()
}

/// Five points centred on `center`, spaced a quarter of the local first-pass
/// spacing.
pub fn refinement_grid(first: &[f64], center: f64) -> Vec<f64> {
    let spacing = first
        .iter()
        .filter(|&&d| d != center)
        .map(|d| (d - center).abs())
        .fold(f64::INFINITY, f64::min);
    if !spacing.is_finite() {
        return vec![center];
    }
    let h = spacing / 4.0;
    let half = (REFINE_POINTS / 2) as i32;
    (-half..=half)
        .map(|k| {
            if k == 0 {
                center
            } else {
                center + k as f64 * h
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GridSearchConfig {
    grid: Vec<f64>,
    pub n_per_point: usize,
    pub target: EmpiricalDist,
    pub mode: DriftMode,
    pub seed: u64,
    pub class: usize,
    pub prior: PriorSpec,
    pub l1: L1Options,
    /// Run a second pass on a 5-point sub-grid around the first-pass arg-min.
    pub refine: bool,
}

impl GridSearchConfig {
    pub fn new(
        grid: Vec<f64>,
        n_per_point: usize,
        target: EmpiricalDist,
        mode: DriftMode,
        seed: u64,
    ) -> Result<Self> {
        validate_grid(&grid)?;
        if n_per_point < MIN_POINTS_PER_DELTA {
            return Err(Error::InvalidRange(format!(
                "n_per_point must be >= {MIN_POINTS_PER_DELTA}, got {n_per_point}"
            )));
        }
        let prior = PriorSpec::standard(target.dim());
        Ok(Self {
            grid,
            n_per_point,
            target,
            mode,
            seed,
            class: 0,
            prior,
            l1: L1Options {
                seed,
                ..L1Options::default()
            },
            refine: false,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn with_refinement(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.class = class;
        self
    }

    pub fn with_prior(mut self, prior: PriorSpec) -> Self {
        self.prior = prior;
        self
    }

    pub fn with_l1(mut self, l1: L1Options) -> Self {
        self.l1 = l1;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaPoint {
    pub delta: f64,
    pub estimate: DistanceEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    /// Every evaluated δ, sorted ascending.
    pub per_delta: Vec<DeltaPoint>,
    pub delta_star: f64,
    /// Set when the runner-up lies within one standard error of the minimum.
    pub ambiguity_flag: bool,
}

/// Arg-min over `(δ, value, std_error)` with ties broken toward smaller |δ|,
/// then toward smaller δ. Returns δ* and the ambiguity flag.
pub fn select_delta_star(points: &[(f64, f64, f64)]) -> (f64, bool) {
    let key = |p: &(f64, f64, f64)| (p.1, p.0.abs(), p.0);
    let mut order: Vec<&(f64, f64, f64)> = points.iter().collect();
    order.sort_by(|a, b| {
        key(a)
            .partial_cmp(&key(b))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let best = order[0];
    let ambiguous = order.get(1).is_some_and(|r| r.1 - best.1 <= best.2);
    (best.0, ambiguous)
}

/// Grid search over any per-δ distance evaluator. Points are evaluated in
/// parallel; the result does not depend on evaluation order.
pub fn grid_search_by<F>(grid: &[f64], refine: bool, eval: F) -> Result<GridSearchReport>
where
    F: Fn(f64) -> Result<DistanceEstimate> + Sync,
{
    validate_grid(grid)?;
    let run = |deltas: &[f64]| -> Result<Vec<DeltaPoint>> {
        deltas
            .par_iter()
            .map(|&delta| {
                Ok(DeltaPoint {
                    delta,
                    estimate: eval(delta)?,
                })
            })
            .collect()
    };
    let mut points = run(grid)?;
    if refine && grid.len() > 1 {
        let (first, _) = select_delta_star(&triples(&points));
        let extra: Vec<f64> = refinement_grid(grid, first)
            .into_iter()
            .filter(|d| !points.iter().any(|p| p.delta == *d))
            .collect();
        points.extend(run(&extra)?);
    }
    points.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let (delta_star, ambiguity_flag) = select_delta_star(&triples(&points));
    Ok(GridSearchReport {
        per_delta: points,
        delta_star,
        ambiguity_flag,
    })
}

/// Grid search for the δ minimizing the L1 distance between generated samples
/// and the target set.
pub fn grid_search_delta(
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    cfg: &GridSearchConfig,
) -> Result<GridSearchReport> {
    if cfg.target.dim() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            got: cfg.target.dim(),
        });
    }
    // common random numbers: every δ reuses the same per-sample substreams
    let streams = StreamFactory::new(cfg.seed);
    grid_search_by(&cfg.grid, cfg.refine, |delta| {
        let drift = DriftConfig::new(delta, cfg.mode);
        let (batch, _) = sample(
            model,
            s,
            &cfg.prior,
            &drift,
            cfg.n_per_point,
            cfg.class,
            &streams,
            false,
        )?;
        l1_distance_with(&EmpiricalDist::from_batch(&batch)?, &cfg.target, &cfg.l1)
    })
}

fn triples(points: &[DeltaPoint]) -> Vec<(f64, f64, f64)> {
    points
        .iter()
        .map(|p| (p.delta, p.estimate.value, p.estimate.std_error))
        .collect()
}

impl GridSearchReport {
    /// Recomputes δ* after applying `f` to every distance value.
    pub fn reselect_with(&self, f: impl Fn(f64) -> f64) -> (f64, bool) {
        let pts: Vec<_> = self
            .per_delta
            .iter()
            .map(|p| (p.delta, f(p.estimate.value), p.estimate.std_error))
            .collect();
        select_delta_star(&pts)
    }

    /// True when distances decrease then increase along the grid (weakly).
    pub fn is_unimodal(&self) -> bool {
        let v: Vec<f64> = self.per_delta.iter().map(|p| p.estimate.value).collect();
        let Some(argmin) = v
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
        else {
            return true;
        };
        v[..=argmin].windows(2).all(|w| w[0] >= w[1])
            && v[argmin..].windows(2).all(|w| w[0] <= w[1])
    }
}
