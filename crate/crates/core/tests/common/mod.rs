//! Independent oracles shared by the integration tests. Nothing here calls
//! into the sampler code it checks.

#![allow(dead_code)]

use driftlab::schedule::NoiseSchedule;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn std_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let sd = m2.sqrt();
    // delta method: Var(s) ≈ (m4 − m2²) / (4 m2 N)
    (sd, ((m4 - m2 * m2) / (4.0 * m2 * n)).sqrt())
}

/// Expected output mean of the drifted ancestral chain for 1-D data N(m, v),
/// stepped with the x₀-form posterior coefficients
/// μ = √ᾱ_{t−1}β_t/(1−ᾱ_t)·x̂₀ + √α_t(1−ᾱ_{t−1})/(1−ᾱ_t)·x_t, where x̂₀ is the
/// exact Gaussian conditional mean. The reverse mean is affine in x_t, so the
/// expectation follows the same affine recursion.
pub fn affine_mean_oracle(
    s: &NoiseSchedule,
    data_mean: f64,
    data_var: f64,
    prior_mean: f64,
    step_delta: f64,
) -> f64 {
    affine_oracle(s, data_mean, data_var, prior_mean, 1.0, step_delta).0
}

/// Mean and variance of the chain output, with σ_t² = β_t and prior N(prior_mean, prior_var).
pub fn affine_oracle(
    s: &NoiseSchedule,
    data_mean: f64,
    data_var: f64,
    prior_mean: f64,
    prior_var: f64,
    step_delta: f64,
) -> (f64, f64) {
    let mut m = prior_mean;
    let mut v = prior_var;
    let mut ab = 1.0;
    let abs: Vec<f64> = s
        .betas()
        .iter()
        .map(|b| {
            ab *= 1.0 - b;
            ab
        })
        .collect();
    for t in (1..=s.steps()).rev() {
        let beta = s.betas()[t - 1];
        let alpha = 1.0 - beta;
        let ab_t = abs[t - 1];
        let ab_prev = if t == 1 { 1.0 } else { abs[t - 2] };
        // E[x₀|x_t] = data_mean + k·(x_t − √ᾱ_t·data_mean)
        let k = ab_t.sqrt() * data_var / (ab_t * data_var + 1.0 - ab_t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let slope = c0 * k + ct;
        let offset = c0 * (data_mean - k * ab_t.sqrt() * data_mean);
        m = slope * m + offset + step_delta;
        v = slope * slope * v + if t > 1 { beta } else { 0.0 };
    }
    (m, v)
}

/// Σ_{t=1}^{T} Π_{s<t} √α_s: the output shift per unit of per-step drift on
/// standard-normal data.
pub fn drift_gain(s: &NoiseSchedule) -> f64 {
    let mut g = 0.0;
    let mut prod = 1.0;
    for &beta in s.betas() {
        g += prod;
        prod *= (1.0 - beta).sqrt();
    }
    g
}

/// Per-coordinate output difference between deterministic DDIM runs with
/// per-step drift `delta` and zero, on standard-normal data. For that data the
/// exact noise prediction is √(1−ᾱ_t)·x, so each update is the linear map
/// x ↦ (√(ᾱ′ᾱ) + √((1−ᾱ′)(1−ᾱ)))·x + δ.
pub fn ddim_drift_difference(s: &NoiseSchedule, subgrid: &[usize], delta: f64) -> f64 {
    let ab = |t: usize| -> f64 { s.betas()[..t].iter().map(|b| 1.0 - b).product() };
    let mut d = 0.0;
    for (j, &t) in subgrid.iter().enumerate() {
        let a = ab(t);
        let a_next = subgrid.get(j + 1).map_or(1.0, |&u| ab(u));
        let slope = (a_next * a).sqrt() + ((1.0 - a_next) * (1.0 - a)).sqrt();
        d = slope * d + delta;
    }
    d
}

/// Σ_bins |P_a(bin) − P_b(bin)| for N(mu_a, 1) and N(mu_b, 1) on equal-width
/// bins over [lo, hi]; mass outside the range is ignored.
pub fn binned_gaussian_l1(mu_a: f64, mu_b: f64, lo: f64, hi: f64, bins: usize) -> f64 {
    let w = (hi - lo) / bins as f64;
    (0..bins)
        .map(|k| {
            let (l, r) = (lo + k as f64 * w, lo + (k + 1) as f64 * w);
            let pa = normal_cdf(r - mu_a) - normal_cdf(l - mu_a);
            let pb = normal_cdf(r - mu_b) - normal_cdf(l - mu_b);
            (pa - pb).abs()
        })
        .sum()
}

/// Composite Simpson rule on [lo, hi] with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
