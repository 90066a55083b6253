mod common;

use common::*;
use driftlab::denoiser::{AnalyticDenoiser, GaussianMixtureSpec};
use driftlab::diffusion::{sample, DriftConfig, DriftMode, SampleBatch};
use driftlab::driftsearch::{
    default_grid, generate_counterfactual, grid_search_by, grid_search_delta, CounterfactualSpec,
    GridSearchConfig, LogisticClassifier,
};
use driftlab::experiment::draw_class;
use driftlab::metrics::{l1_distance_with, EmpiricalDist, L1Options};
use driftlab::rng::{fill_normal, StreamFactory};
use driftlab::schedule::{make_linear_schedule, NoiseSchedule, PriorSpec};

fn desk() -> NoiseSchedule {
    make_linear_schedule(50, 1e-3, 0.3).unwrap()
}

fn shifted_normals(seed: u64, n: usize, shift: f64) -> EmpiricalDist {
    let mut v = vec![0.0; n];
    fill_normal(&mut StreamFactory::new(seed).stream("target", 0), &mut v);
    v.iter_mut().for_each(|x| *x += shift);
    EmpiricalDist::from_values(&v).unwrap()
}

#[test]
fn compensable_shift_is_recovered_exactly() {
    let s = desk();
    let model = AnalyticDenoiser::new(GaussianMixtureSpec::standard_normal(1), s.clone());
    let gain = drift_gain(&s);
    let grid = default_grid();
    let mut passes = 0;
    for seed in 0..10u64 {
        // standard-normal data under per-step drift δ samples N(G·δ, 1)
        let want = grid[(seed as usize * 5 + 1) % grid.len()];
        let target = shifted_normals(100 + seed, 10_000, gain * want);
        let cfg = GridSearchConfig::new(grid.clone(), 2000, target, DriftMode::PerStep, seed).unwrap();
        let r = grid_search_delta(&model, &s, &cfg).unwrap();
        if r.delta_star == want {
            passes += 1;
        }
        assert_eq!(r.per_delta.len(), grid.len());
    }
    assert!(passes >= 9, "{passes}/10");
}

#[test]
fn self_target_selects_zero_or_flags_ambiguity() {
    let s = desk();
    let model = AnalyticDenoiser::new(GaussianMixtureSpec::standard_normal(1), s.clone());
    let prior = PriorSpec::standard(1);
    for seed in 0..5u64 {
        let (own, _) = sample(&model, &s, &prior, &DriftConfig::none(), 5000, 0, &StreamFactory::new(900 + seed), false).unwrap();
        let cfg = GridSearchConfig::new(
            vec![-0.1, 0.0, 0.1],
            2000,
            EmpiricalDist::from_batch(&own).unwrap(),
            DriftMode::PerStep,
            seed,
        )
        .unwrap();
        let r = grid_search_delta(&model, &s, &cfg).unwrap();
        assert!(r.delta_star == 0.0 || r.ambiguity_flag, "seed {seed}: {}", r.delta_star);
    }
}

#[test]
fn report_is_reproducible_and_argmin_is_transform_invariant() {
    let s = desk();
    let model = AnalyticDenoiser::new(GaussianMixtureSpec::standard_normal(1), s.clone());
    let cfg = GridSearchConfig::new(default_grid(), 500, shifted_normals(1, 3000, 1.0), DriftMode::Both, 4)
        .unwrap()
        .with_refinement(true);
    let a = grid_search_delta(&model, &s, &cfg).unwrap();
    let b = grid_search_delta(&model, &s, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(a.per_delta.len() > default_grid().len());
    for f in [|v: f64| v.exp(), |v: f64| 3.0 * v + 1.0, |v: f64| v.sqrt()] {
        assert_eq!(a.reselect_with(f).0, a.delta_star);
    }
}

#[test]
fn unimodality_over_the_sweep_grid_is_reported() {
    let s = desk();
    let model = AnalyticDenoiser::new(GaussianMixtureSpec::standard_normal(1), s.clone());
    let grid = vec![-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2];
    let gain = drift_gain(&s);
    let unimodal = (0..5u64)
        .filter(|&seed| {
            let cfg = GridSearchConfig::new(grid.clone(), 2000, shifted_normals(50 + seed, 10_000, gain * 0.08), DriftMode::PerStep, seed)
                .unwrap();
            grid_search_delta(&model, &s, &cfg).unwrap().is_unimodal()
        })
        .count();
    eprintln!("unimodal distance curves: {unimodal}/5");
}

fn two_class() -> GaussianMixtureSpec {
    GaussianMixtureSpec::one_dim_classes(&[(-2.0, 0.25), (2.0, 0.25)])
}

fn fitted_classifier(spec: &GaussianMixtureSpec) -> LogisticClassifier {
    let (x, y) = driftlab::denoiser::DataSource::draw(spec, 2000, &mut StreamFactory::new(1).stream("clf", 0));
    LogisticClassifier::fit(&SampleBatch::new(x, 1, y).unwrap(), 2, 300, 0.5).unwrap()
}

#[test]
fn shallow_regeneration_stays_close_to_the_input() {
    let s = make_linear_schedule(50, 1e-4, 0.2).unwrap();
    let spec = two_class();
    let model = AnalyticDenoiser::new(spec.clone(), s.clone());
    let cf = CounterfactualSpec::new(1.0, fitted_classifier(&spec), 1).unwrap();
    let x = draw_class(&spec, 0, 2000, &mut StreamFactory::new(2).stream("x", 0)).unwrap();
    let out = generate_counterfactual(&x, &model, &s, &cf, &DriftConfig::none(), 1e-6, 3).unwrap();
    assert_eq!(out.depth, 1);
    let mut gaps: Vec<f64> = x.data.iter().zip(&out.x_prime.data).map(|(a, b)| (a - b).abs()).collect();
    let sigma_1 = s.betas()[0].sqrt();
    assert!(median(&mut gaps) < sigma_1, "{} vs {sigma_1}", median(&mut gaps));
    assert!(out.flip_rate < 0.01, "{}", out.flip_rate);
}

#[test]
fn full_regeneration_flips_labels() {
    let s = desk();
    let spec = two_class();
    let model = AnalyticDenoiser::new(spec.clone(), s.clone());
    let cf = CounterfactualSpec::new(1.0, fitted_classifier(&spec), 1).unwrap();
    let x = draw_class(&spec, 0, 2000, &mut StreamFactory::new(2).stream("x", 0)).unwrap();
    let out = generate_counterfactual(&x, &model, &s, &cf, &DriftConfig::none(), 1.0, 4).unwrap();
    assert!(out.flip_rate >= 0.95, "{}", out.flip_rate);
    for l in &out.losses {
        assert!((l.total - (l.outcome_term + l.instance_term)).abs() <= 1e-12 * l.total.abs().max(1.0));
    }
}

#[test]
fn searched_drift_is_no_worse_than_none() {
    let s = desk();
    let spec = two_class();
    let model = AnalyticDenoiser::new(spec.clone(), s.clone());
    let cf = CounterfactualSpec::new(1.0, fitted_classifier(&spec), 1).unwrap();
    let grid: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.005).collect();
    // The analytic model is exact, so the L1 optimum is δ = 0 and any other
    // pick is Monte-Carlo noise. A worse δ* must at least be flagged.
    let mut worse = 0;
    for seed in 0..5u64 {
        let streams = StreamFactory::new(seed);
        let x = draw_class(&spec, 0, 1000, &mut streams.stream("x", 0)).unwrap();
        let target = EmpiricalDist::from_batch(&draw_class(&spec, 1, 5000, &mut streams.stream("target", 0)).unwrap()).unwrap();
        let opts = L1Options { seed, ..L1Options::default() };
        let report = grid_search_by(&grid, false, |delta| {
            let drift = DriftConfig::new(delta, DriftMode::PerStep);
            let out = generate_counterfactual(&x, &model, &s, &cf, &drift, 1.0, 1000 + seed)?;
            l1_distance_with(&EmpiricalDist::from_batch(&out.x_prime)?, &target, &opts)
        })
        .unwrap();
        let eval = |delta: f64| {
            let drift = DriftConfig::new(delta, DriftMode::PerStep);
            generate_counterfactual(&x, &model, &s, &cf, &drift, 1.0, 2000 + seed).unwrap()
        };
        let (with, without) = (eval(report.delta_star), eval(0.0));
        let diffs: Vec<f64> = with.losses.iter().zip(&without.losses).map(|(a, b)| a.total - b.total).collect();
        let (d, se) = mean_and_se(&diffs);
        eprintln!("seed {seed}: δ*={:+.4} ambiguous={} Δtotal={d:+.4} (se {se:.4})", report.delta_star, report.ambiguity_flag);
        if d > 2.0 * se {
            worse += 1;
            assert!(report.ambiguity_flag, "seed {seed}: unflagged δ* made things worse");
        }
    }
    eprintln!("seeds where δ* was worse than δ = 0: {worse}/5");
}
