mod common;

use common::*;
use driftlab::denoiser::{AnalyticDenoiser, Component, Denoiser, GaussianMixtureSpec};
use driftlab::diffusion::{
    ddim_sample, forward_sample, reverse_mean, reverse_step, sample, uniform_subgrid, DriftConfig,
    DriftMode, SampleBatch,
};
use driftlab::rng::StreamFactory;
use driftlab::schedule::{make_linear_schedule, NoiseSchedule, PriorSpec, ScheduleConfig, VarianceMode};

fn desk() -> NoiseSchedule {
    make_linear_schedule(50, 1e-3, 0.3).unwrap()
}

fn standard(s: &NoiseSchedule) -> AnalyticDenoiser {
    AnalyticDenoiser::new(GaussianMixtureSpec::standard_normal(1), s.clone())
}

#[test]
fn forward_drifted_target_mean_monte_carlo() {
    // single step with ᾱ = 0.25
    let s = make_linear_schedule(1, 0.75, 0.75).unwrap();
    let n = 1_000_000;
    let x0 = SampleBatch::new(vec![0.0; n], 1, vec![0; n]).unwrap();
    let drift = DriftConfig::new(0.1, DriftMode::PerStep).in_training();
    let mut rng = StreamFactory::new(5).stream("test", 0);
    let (xt, target) = forward_sample(&x0, 1, &s, &drift, &mut rng).unwrap();
    let (m, se) = mean_and_se(&xt.data);
    let expect = 0.75f64.sqrt() * 0.1;
    assert!((m - expect).abs() < 3.0 * se, "{m} vs {expect} (se {se})");
    let (mt, set) = mean_and_se(&target);
    assert!((mt - 0.1).abs() < 3.0 * set, "{mt}");
}

#[test]
fn reverse_mean_matches_gaussian_conditioning_by_quadrature() {
    let s = desk();
    let model = standard(&s);
    for t in [2, 7, 25, 50] {
        let alpha = 1.0 - s.betas()[t - 1];
        let beta = s.betas()[t - 1];
        for xt in [-2.5, -0.3, 0.0, 1.1, 3.0] {
            // x_{t−1} ~ N(0,1) and x_t | x_{t−1} ~ N(√α·x_{t−1}, β)
            let joint = |x: f64| normal_pdf(x) * normal_pdf((xt - alpha.sqrt() * x) / beta.sqrt());
            let z = simpson(joint, -14.0, 14.0, 40_000);
            let first = simpson(|x| x * joint(x), -14.0, 14.0, 40_000);
            let brute = first / z;
            let batch = SampleBatch::new(vec![xt], 1, vec![0]).unwrap();
            let got = reverse_mean(&batch, t, &model, &s, &DriftConfig::none()).unwrap();
            assert!(
                (got.data[0] - brute).abs() < 1e-10,
                "t={t} x={xt}: {} vs {brute}",
                got.data[0]
            );
        }
    }
}

#[test]
fn reverse_step_noise_is_added_around_the_mean() {
    let s = desk();
    let model = standard(&s);
    let xt = SampleBatch::new(vec![0.4, -1.0, 2.0], 1, vec![0; 3]).unwrap();
    let drift = DriftConfig::new(0.05, DriftMode::PerStep);
    let mean = reverse_mean(&xt, 10, &model, &s, &drift).unwrap();
    let mut rng = StreamFactory::new(1).stream("test", 0);
    let mut z_rng = rng.clone();
    let step = reverse_step(&xt, 10, &model, &s, &drift, &mut rng).unwrap();
    let sigma = s.betas()[9].sqrt();
    for i in 0..3 {
        let z = driftlab::rng::normal(&mut z_rng);
        assert!((step.data[i] - (mean.data[i] + sigma * z)).abs() < 1e-14);
    }
    let last = reverse_step(&xt, 1, &model, &s, &drift, &mut rng).unwrap();
    let last_mean = reverse_mean(&xt, 1, &model, &s, &drift).unwrap();
    assert_eq!(last.data, last_mean.data);
}

#[test]
fn zero_delta_is_indistinguishable_from_the_plain_sampler() {
    let s = desk();
    let mix = GaussianMixtureSpec::new(vec![vec![
        Component { weight: 0.5, mean: vec![-0.75], var: vec![0.25] },
        Component { weight: 0.5, mean: vec![0.75], var: vec![0.25] },
    ]])
    .unwrap();
    let model = AnalyticDenoiser::new(mix, s.clone());
    let prior = PriorSpec::standard(1);
    let n = 20_000;
    let (plain, _) = sample(&model, &s, &prior, &DriftConfig::none(), n, 0, &StreamFactory::new(1), false).unwrap();
    // independent noise for the drifted arm, so this is a genuine two-sample test
    let drift = DriftConfig::new(0.0, DriftMode::PerStep);
    let (zero, _) = sample(&model, &s, &prior, &drift, n, 0, &StreamFactory::new(2), false).unwrap();
    let d = ks_statistic(&plain.data, &zero.data);
    assert!(d < ks_critical(n, n, 0.01), "KS {d}");
}

#[test]
fn delta_zero_is_bit_exact_for_every_mode_and_sampler() {
    let s = desk();
    let model = standard(&s);
    let prior = PriorSpec::standard(1);
    let streams = StreamFactory::new(3);
    let base = sample(&model, &s, &prior, &DriftConfig::none(), 500, 0, &streams, true).unwrap();
    let grid = uniform_subgrid(50, 10);
    let ddim_base = ddim_sample(&model, &s, &prior, &grid, &DriftConfig::none(), 0.3, 500, 0, &streams).unwrap();
    for mode in [DriftMode::PriorOnly, DriftMode::PerStep, DriftMode::Both] {
        let d = DriftConfig::new(0.0, mode);
        assert_eq!(sample(&model, &s, &prior, &d, 500, 0, &streams, true).unwrap(), base);
        let ddim = ddim_sample(&model, &s, &prior, &grid, &d, 0.3, 500, 0, &streams).unwrap();
        assert_eq!(ddim, ddim_base);
    }
}

#[test]
fn per_step_drift_follows_the_affine_recursion() {
    let s = make_linear_schedule(10, 1e-3, 0.3).unwrap();
    let (m, v) = (0.3, 0.5);
    let model = AnalyticDenoiser::new(GaussianMixtureSpec::gaussian(vec![m], vec![v]), s.clone());
    let prior = PriorSpec::standard(1);
    for delta in [-0.1, 0.1] {
        let drift = DriftConfig::new(delta, DriftMode::PerStep);
        let (b, _) = sample(&model, &s, &prior, &drift, 100_000, 0, &StreamFactory::new(11), false).unwrap();
        let (got, se) = mean_and_se(&b.data);
        let (expect, var) = affine_oracle(&s, m, v, 0.0, 1.0, delta);
        assert!((got - expect).abs() < 3.0 * se, "δ={delta}: {got} vs {expect} (se {se})");
        let (sd, sd_se) = std_and_se(&b.data);
        assert!((sd - var.sqrt()).abs() < 4.0 * sd_se, "{sd} vs {}", var.sqrt());
    }
}

#[test]
fn affine_oracle_agrees_with_gain_on_standard_data() {
    let s = desk();
    let g = drift_gain(&s);
    assert!((affine_mean_oracle(&s, 0.0, 1.0, 0.0, 0.1) - 0.1 * g).abs() < 1e-12);
}

#[test]
fn sweep_means_strictly_increase_and_trajectories_are_ordered() {
    let s = desk();
    let model = standard(&s);
    let prior = PriorSpec::standard(1);
    let streams = StreamFactory::new(4);
    let grid = [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2];
    let runs: Vec<_> = grid
        .iter()
        .map(|&d| {
            let drift = DriftConfig::new(d, DriftMode::PerStep);
            sample(&model, &s, &prior, &drift, 10_000, 0, &streams, true).unwrap()
        })
        .collect();
    for w in runs.windows(2) {
        assert!(w[1].0.mean() > w[0].0.mean());
        let (a, b) = (w[0].1.as_ref().unwrap(), w[1].1.as_ref().unwrap());
        assert_eq!(a.len(), 51);
        // with shared noise every curve sits above the previous one after t = T
        for k in 1..a.len() {
            assert!(b.per_step_mean[k] > a.per_step_mean[k], "step {k}");
        }
        assert_eq!(a.per_step_mean[0], b.per_step_mean[0]);
    }
}

#[test]
fn ddim_full_grid_eta_one_matches_ancestral_in_distribution() {
    let cfg = ScheduleConfig::linear(50, 1e-3, 0.3).with_variance(VarianceMode::Posterior);
    let s = cfg.build().unwrap();
    let mix = GaussianMixtureSpec::one_dim_classes(&[(0.5, 0.3)]);
    let model = AnalyticDenoiser::new(mix, s.clone());
    let prior = PriorSpec::standard(1);
    let n = 20_000;
    let full: Vec<usize> = (1..=50).rev().collect();
    let a = ddim_sample(&model, &s, &prior, &full, &DriftConfig::none(), 1.0, n, 0, &StreamFactory::new(1)).unwrap();
    let (b, _) = sample(&model, &s, &prior, &DriftConfig::none(), n, 0, &StreamFactory::new(2), false).unwrap();
    let d = ks_statistic(&a.data, &b.data);
    assert!(d < ks_critical(n, n, 0.01), "KS {d}");
}

#[test]
fn ddim_eta_zero_drift_difference_matches_the_oracle() {
    let s = desk();
    let model = standard(&s);
    let prior = PriorSpec::standard(1);
    let streams = StreamFactory::new(8);
    for grid in [uniform_subgrid(50, 10), (1..=50).rev().collect(), vec![40, 13, 2]] {
        let base = ddim_sample(&model, &s, &prior, &grid, &DriftConfig::none(), 0.0, 200, 0, &streams).unwrap();
        let drift = DriftConfig::new(0.1, DriftMode::PerStep);
        let moved = ddim_sample(&model, &s, &prior, &grid, &drift, 0.0, 200, 0, &streams).unwrap();
        let expect = ddim_drift_difference(&s, &grid, 0.1);
        assert!(expect > 0.1);
        for (a, b) in base.data.iter().zip(&moved.data) {
            assert!((b - a - expect).abs() < 1e-8, "{} vs {expect}", b - a);
        }
    }
}

#[test]
fn conditioning_lands_in_the_right_basin() {
    let s = desk();
    let spec = GaussianMixtureSpec::one_dim_classes(&[(-3.0, 0.25), (3.0, 0.25)]);
    let model = AnalyticDenoiser::new(spec, s.clone());
    assert_eq!(model.num_classes(), 2);
    let prior = PriorSpec::standard(1);
    for (c, sign) in [(0usize, -1.0), (1, 1.0)] {
        let (b, _) = sample(&model, &s, &prior, &DriftConfig::none(), 5_000, c, &StreamFactory::new(9), false).unwrap();
        let hits = b.data.iter().filter(|&&x| x * sign > 0.0).count();
        assert!(hits as f64 / 5_000.0 >= 0.99, "class {c}: {hits}");
    }
}

#[test]
fn order_independent_under_thread_count() {
    let s = desk();
    let model = standard(&s);
    let prior = PriorSpec::standard(1);
    let drift = DriftConfig::new(0.05, DriftMode::Both);
    let streams = StreamFactory::new(12);
    let run = || sample(&model, &s, &prior, &drift, 300, 0, &streams, true).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(one, four);
}
