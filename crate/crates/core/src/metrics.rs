//! Monte-Carlo distances between sample sets and summary diagnostics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::SampleBatch;
use crate::error::{Error, Result};
use crate::rng::{domain, StreamFactory};

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_BOOTSTRAP: usize = 200;

/// A sample set with cached per-dimension moments (population convention).
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDist {
    samples: Vec<f64>,
    dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl EmpiricalDist {
    pub fn new(samples: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
            return Err(Error::DimMismatch {
                expected: dim.max(1),
                got: samples.len(),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite sample".into()));
        }
        let n = samples.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in samples.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in samples.chunks_exact(dim) {
            for d in 0..dim {
                let r = row[d] - mean[d];
                var[d] += r * r;
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self {
            samples,
            dim,
            mean,
            std,
        })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn from_batch(b: &SampleBatch) -> Result<Self> {
        Self::new(b.data.clone(), b.dim)
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn column(&self, d: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().skip(d).step_by(self.dim).copied()
    }

    fn range(&self, d: usize) -> (f64, f64) {
        self.column(d)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Equal-width histogram of dimension `d` over this set's own range.
    pub fn histogram(&self, d: usize, bins: usize) -> Result<Histogram> {
        if bins == 0 {
            return Err(Error::InvalidRange("bins must be >= 1".into()));
        }
        if d >= self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: d + 1,
            });
        }
        let (lo, hi) = self.range(d);
        let edges = Edges { lo, hi, bins };
        let mut counts = vec![0u64; bins];
        for v in self.column(d) {
            counts[edges.index(v)] += 1;
        }
        Ok(Histogram {
            edges: (0..=bins).map(|i| edges.edge(i)).collect(),
            counts,
        })
    }

    fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for v in &self.samples {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Clone, Copy, Debug)]
struct Edges {
    lo: f64,
    hi: f64,
    bins: usize,
}

impl Edges {
    fn index(&self, v: f64) -> usize {
        if self.hi <= self.lo {
            return 0;
        }
        let k = ((v - self.lo) / (self.hi - self.lo) * self.bins as f64) as usize;
        k.min(self.bins - 1)
    }

    fn edge(&self, i: usize) -> f64 {
        if i == self.bins {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * (i as f64 / self.bins as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricId {
    L1,
    Mmd,
}

impl MetricId {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::L1 => "l1",
            MetricId::Mmd => "mmd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub metric: MetricId,
    pub value: f64,
    pub std_error: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Bin count for L1, kernel bandwidth for MMD.
    pub param: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1Options {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}

impl Default for L1Options {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

fn check_pair(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    for n in [a.len(), b.len()] {
        if n < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: n });
        }
    }
    Ok(())
}

/// Per-dimension normalized-histogram L1 over shared equal-width edges spanning
/// both sets, averaged over dimensions. Value lies in [0, 2].
pub fn l1_distance(a: &EmpiricalDist, b: &EmpiricalDist, bins: usize) -> Result<DistanceEstimate> {
    l1_distance_with(
        a,
        b,
        &L1Options {
            bins,
            ..L1Options::default()
        },
    )
}

/// Bin indices of every sample, per dimension, under the shared edges.
struct Binned {
    a: Vec<Vec<u32>>,
    b: Vec<Vec<u32>>,
    bins: usize,
}

impl Binned {
    fn new(a: &EmpiricalDist, b: &EmpiricalDist, bins: usize) -> Self {
        let mut out = Binned {
            a: Vec::new(),
            b: Vec::new(),
            bins,
        };
        for d in 0..a.dim {
            let (la, ha) = a.range(d);
            let (lb, hb) = b.range(d);
            let edges = Edges {
                lo: la.min(lb),
                hi: ha.max(hb),
                bins,
            };
            out.a
                .push(a.column(d).map(|v| edges.index(v) as u32).collect());
            out.b
                .push(b.column(d).map(|v| edges.index(v) as u32).collect());
        }
        out
    }

    /// L1 for the rows selected by `ia` / `ib` (all rows when `None`).
    ///
    /// Computed as Σ_d Σ_k |c_a·n_b − c_b·n_a| / (n_a·n_b·dim) in integers, so
    /// the value is exact up to one final rounding and symmetric bit for bit.
    fn value(&self, ia: Option<&[usize]>, ib: Option<&[usize]>) -> f64 {
        let na = ia.map_or(self.a[0].len(), |i| i.len()) as u128;
        let nb = ib.map_or(self.b[0].len(), |i| i.len()) as u128;
        let mut ca = vec![0u64; self.bins];
        let mut cb = vec![0u64; self.bins];
        let mut total: u128 = 0;
        for (da, db) in self.a.iter().zip(&self.b) {
            ca.iter_mut().for_each(|c| *c = 0);
            cb.iter_mut().for_each(|c| *c = 0);
            match ia {
                Some(idx) => idx.iter().for_each(|&i| ca[da[i] as usize] += 1),
                None => da.iter().for_each(|&k| ca[k as usize] += 1),
            }
            match ib {
                Some(idx) => idx.iter().for_each(|&i| cb[db[i] as usize] += 1),
                None => db.iter().for_each(|&k| cb[k as usize] += 1),
            }
            for (&x, &y) in ca.iter().zip(&cb) {
                total += (x as u128 * nb).abs_diff(y as u128 * na);
            }
        }
        total as f64 / ((na * nb) as f64 * self.a.len() as f64)
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// L1 distance with bootstrap standard error. Replicate `r` resamples each
/// side from its own keyed substream; the two sides are ranked by content
/// hash so swapping `a` and `b` reproduces the same replicates.
pub fn l1_distance_with(
    a: &EmpiricalDist,
    b: &EmpiricalDist,
    opts: &L1Options,
) -> Result<DistanceEstimate> {
    check_pair(a, b)?;
    if opts.bins < 2 {
        return Err(Error::InvalidRange(format!(
            "bins must be >= 2, got {}",
            opts.bins
        )));
    }
    let binned = Binned::new(a, b, opts.bins);
    let value = binned.value(None, None);
    let (ha, hb) = (a.content_hash(), b.content_hash());
    let (rank_a, rank_b) = if ha <= hb { (0u64, 1u64) } else { (1, 0) };
    let streams = StreamFactory::new(opts.seed);
    let (na, nb) = (a.len(), b.len());
    let replicates: Vec<f64> = (0..opts.bootstrap)
        .into_par_iter()
        .map(|r| {
            let draw = |rank: u64, n: usize| -> Vec<usize> {
                let mut rng = streams.stream(domain::BOOTSTRAP, 2 * r as u64 + rank);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            };
            let ia = draw(rank_a, na);
            let ib = draw(rank_b, nb);
            binned.value(Some(&ia), Some(&ib))
        })
        .collect();
    Ok(DistanceEstimate {
        metric: MetricId::L1,
        value,
        std_error: sample_std(&replicates),
        n_a: na,
        n_b: nb,
        param: opts.bins as f64,
    })
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Unbiased squared MMD between row ranges with kernel exp(−‖x−y‖² / 2h²).
fn mmd_unbiased(a: &[f64], b: &[f64], dim: usize, bandwidth: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| (-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp();
    let ra: Vec<&[f64]> = a.chunks_exact(dim).collect();
    let rb: Vec<&[f64]> = b.chunks_exact(dim).collect();
    let (m, n) = (ra.len() as f64, rb.len() as f64);
    let within = |rows: &[&[f64]]| -> f64 {
        (0..rows.len())
            .into_par_iter()
            .map(|i| {
                (i + 1..rows.len())
                    .map(|j| k(rows[i], rows[j]))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum::<f64>()
            * 2.0
    };
    let cross: f64 = ra
        .par_iter()
        .map(|x| rb.iter().map(|y| k(x, y)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    within(&ra) / (m * (m - 1.0)) + within(&rb) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

pub const MMD_BLOCKS: usize = 10;

/// Unbiased squared-MMD estimate with a Gaussian kernel. The raw (possibly
/// slightly negative) value is reported. The standard error is a batch-means
/// estimate over disjoint block pairs.
pub fn mmd_distance(
    a: &EmpiricalDist,
    b: &EmpiricalDist,
    bandwidth: f64,
) -> Result<DistanceEstimate> {
    check_pair(a, b)?;
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidRange(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    let dim = a.dim;
    let value = mmd_unbiased(&a.samples, &b.samples, dim, bandwidth);
    let blocks = MMD_BLOCKS.min(a.len() / 2).min(b.len() / 2);
    let std_error = if blocks >= 2 {
        let (sa, sb) = (a.len() / blocks, b.len() / blocks);
        let vals: Vec<f64> = (0..blocks)
            .map(|k| {
                mmd_unbiased(
                    &a.samples[k * sa * dim..(k + 1) * sa * dim],
                    &b.samples[k * sb * dim..(k + 1) * sb * dim],
                    dim,
                    bandwidth,
                )
            })
            .collect();
        // block statistics have `blocks` times the variance of the full one
        sample_std(&vals) / (blocks as f64).sqrt()
    } else {
        0.0
    };
    Ok(DistanceEstimate {
        metric: MetricId::Mmd,
        value,
        std_error,
        n_a: a.len(),
        n_b: b.len(),
        param: bandwidth,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimMoments {
    pub mean: f64,
    pub std: f64,
    pub skew: f64,
    /// Set when std = 0; skew is then reported as 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub n: usize,
    /// Always "population": std and skew divide by N.
    pub convention: String,
    pub per_dim: Vec<DimMoments>,
}

pub fn moments_report(d: &EmpiricalDist) -> Result<MomentsReport> {
    if d.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: d.len(),
        });
    }
    let n = d.len() as f64;
    let per_dim = (0..d.dim)
        .map(|k| {
            let mean = d.mean[k];
            let std = d.std[k];
            if std == 0.0 {
                return DimMoments {
                    mean,
                    std,
                    skew: 0.0,
                    degenerate: true,
                };
            }
            let m3 = d.column(k).map(|v| (v - mean).powi(3)).sum::<f64>() / n;
            DimMoments {
                mean,
                std,
                skew: m3 / std.powi(3),
                degenerate: false,
            }
        })
        .collect();
    Ok(MomentsReport {
        n: d.len(),
        convention: "population".into(),
        per_dim,
    })
}
