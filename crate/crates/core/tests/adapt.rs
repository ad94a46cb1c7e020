mod common;

use std::f64::consts::PI;

use bhcp::adapt::*;
use bhcp::error::Error;
use bhcp::observe::*;
use bhcp::operators::MassKind;
use bhcp::presets::InitialCondition;
use bhcp::tikhonov::Method;
use common::*;
use proptest::prelude::*;

#[test]
fn lambda_step_synthetic_value() {
    let l = lambda_step(1.0, 0.1, 1.0, 100, 2).unwrap();
    assert!((l - 10f64.powf(-8.0 / 3.0)).abs() < 1e-15, "{l}");
    assert!((l - 2.154e-3).abs() < 1e-6);
}

#[test]
fn lambda_step_exponent_in_two_dimensions() {
    let a = lambda_step(1.3, 0.02, 4.0, 400, 2).unwrap();
    let b = lambda_step(1.3, 0.04, 4.0, 400, 2).unwrap();
    assert!((b / a - 2f64.powf(4.0 / 3.0)).abs() < 1e-12);
    // One dimension: exponent 1 / (1/2 + 1/8) = 8/5.
    let a = lambda_step(1.0, 0.02, 1.0, 50, 1).unwrap();
    let b = lambda_step(1.0, 0.04, 1.0, 50, 1).unwrap();
    assert!((b / a - 2f64.powf(8.0 / 5.0)).abs() < 1e-12);
}

#[test]
fn zero_misfit_or_zero_solution_is_degenerate() {
    // Zero misfit maps to zero, which the iteration raises to the floor.
    assert_eq!(lambda_step(1.0, 0.0, 1.0, 100, 2).unwrap(), 0.0);
    assert!(matches!(lambda_step(0.0, 0.1, 1.0, 100, 2), Err(Error::Degenerate(_))));
    assert!(lambda_step(1.0, -0.1, 1.0, 100, 2).is_err());
}

#[test]
fn initial_lambda_rule() {
    assert!((initial_lambda(400, 2) - 400f64.powf(-2.0 / 3.0)).abs() < 1e-15);
    assert!((initial_lambda(100, 1) - 100f64.powf(-0.8)).abs() < 1e-15);
}

fn exact_observation(sigma: f64, seed: u64) -> Observation {
    let g = square(17);
    let s = SensorSet::uniform_with(&g, 20, Placement::Interpolated).unwrap();
    let decay = (-0.8f64).exp();
    let clean: Vec<f64> = s.points().iter().map(|p| decay * (2.0 * p[0]).sin() * (2.0 * p[1]).sin()).collect();
    Observation::from_clean(&s, &clean, &NoiseModel::gaussian(sigma, seed), 0, "smooth").unwrap()
}

#[test]
fn h2_estimate_of_zero_data_is_zero() {
    let mut obs = exact_observation(0.0, 0);
    obs.values.iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(estimate_h2(&obs).unwrap(), 0.0);
}

#[test]
fn h2_estimate_matches_closed_form_norm() {
    // ||sin 2x sin 2y||^2 over [0,pi]^2 with L2, H1 and H2 terms: (1 + 8 + 64) pi^2 / 4.
    let analytic = (-0.8f64).exp() * (PI * PI / 4.0 * 73.0).sqrt();
    let est = estimate_h2(&exact_observation(0.0, 0)).unwrap();
    assert!((est - analytic).abs() <= 0.15 * analytic, "{est} vs {analytic}");
}

#[test]
fn h2_estimate_is_robust_to_noise() {
    let clean = estimate_h2(&exact_observation(0.0, 0)).unwrap();
    for seed in 0..5 {
        let noisy = estimate_h2(&exact_observation(0.05, seed)).unwrap();
        assert!((noisy - clean).abs() <= 0.25 * clean, "seed {seed}: {noisy} vs {clean}");
    }
}

fn smooth_observation(sigma: f64, seed: u64) -> (bhcp::forward::ForwardConfig, Observation) {
    let g = square(17);
    let cfg = heat(&g, MassKind::Lumped, 0.1, 1e-3);
    let s = SensorSet::on_lattice(&g, 20, Placement::Interpolated, WeightRule::Unit).unwrap();
    let f = InitialCondition::smooth().field(&g).unwrap();
    let obs = observe(&cfg, &f, &s, &NoiseModel::gaussian(sigma, seed)).unwrap();
    (cfg, obs)
}

#[test]
fn smooth_case_converges_with_monotone_misfit() {
    let (cfg, obs) = smooth_observation(0.05, 1);
    let (trace, result) = adapt_lambda(&obs, &cfg, &AdaptOptions::default()).unwrap();
    assert!(trace.converged);
    assert!(trace.steps() <= 15);
    assert!(trace.misfit_monotone());
    let l = trace.final_lambda();
    assert!((3.936e-4 / 5.0..=3.936e-4 * 5.0).contains(&l), "{l}");
    assert_eq!(result.lambda, l);
    for e in &trace.entries {
        assert!(e.lambda > 0.0 && e.lambda.is_finite() && e.misfit.is_finite() && e.f_norm.is_finite());
    }
}

#[test]
fn converged_lambda_is_a_fixed_point() {
    let (cfg, obs) = smooth_observation(0.05, 2);
    let opts = AdaptOptions { tol: 1e-6, ..AdaptOptions::default() };
    let (trace, _) = adapt_lambda(&obs, &cfg, &opts).unwrap();
    assert!(trace.converged);
    let last = trace.entries.last().unwrap();
    let next = lambda_step(last.f_norm, last.misfit, trace.h_est, obs.len(), 2).unwrap();
    assert!((next - last.lambda).abs() <= 1e-5 * last.lambda);
}

#[test]
fn dense_and_iterative_inner_solvers_give_the_same_trace() {
    let (cfg, obs) = smooth_observation(0.05, 3);
    let (a, _) = adapt_lambda(&obs, &cfg, &AdaptOptions::default()).unwrap();
    let opts = AdaptOptions { method: Method::DenseEigen, ..AdaptOptions::default() };
    let (b, _) = adapt_lambda(&obs, &cfg, &opts).unwrap();
    assert_eq!(a.steps(), b.steps());
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert!((x.lambda - y.lambda).abs() <= 1e-6 * x.lambda);
    }
}

#[test]
fn noiseless_data_drive_lambda_down() {
    let (cfg, noisy) = smooth_observation(0.05, 4);
    let (cfg0, clean) = smooth_observation(0.0, 4);
    let (t_noisy, _) = adapt_lambda(&noisy, &cfg, &AdaptOptions::default()).unwrap();
    let opts = AdaptOptions { max_outer: 40, ..AdaptOptions::default() };
    let (t_clean, _) = adapt_lambda(&clean, &cfg0, &opts).unwrap();
    // Descends until the misfit reaches the inner-solver tolerance.
    assert!(t_clean.final_lambda() < 1e-6 * t_noisy.final_lambda(), "{} vs {}", t_clean.final_lambda(), t_noisy.final_lambda());
    assert!(t_clean.entries.iter().all(|e| e.lambda >= LAMBDA_MIN));
}

#[test]
fn h2_override_replaces_the_estimate() {
    let (cfg, obs) = smooth_observation(0.05, 5);
    let opts = AdaptOptions { h2_override: Some(2.0), max_outer: 1, ..AdaptOptions::default() };
    let (trace, _) = adapt_lambda(&obs, &cfg, &opts).unwrap();
    assert_eq!(trace.h_est, 2.0);
    let first = &trace.entries[0];
    let expected = lambda_step(first.f_norm, first.misfit, 2.0, obs.len(), 2).unwrap();
    assert!((trace.entries[1].lambda - expected).abs() <= 1e-15 * expected);
}

#[test]
fn rejects_bad_options() {
    let (cfg, obs) = smooth_observation(0.05, 6);
    let bad = AdaptOptions { tol: 0.0, ..AdaptOptions::default() };
    assert!(adapt_lambda(&obs, &cfg, &bad).is_err());
    let bad = AdaptOptions { initial: InitialLambda::Value(-1.0), ..AdaptOptions::default() };
    assert!(adapt_lambda(&obs, &cfg, &bad).is_err());
}

#[test]
fn trace_csv_has_one_row_per_entry() {
    let (cfg, obs) = smooth_observation(0.05, 7);
    let (trace, _) = adapt_lambda(&obs, &cfg, &AdaptOptions::default()).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "j,lambda,misfit,f_norm,J");
    assert_eq!(text.lines().count(), trace.entries.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_step_is_positive_and_monotone_in_misfit(
        f_norm in 0.01f64..100.0,
        misfit in 1e-6f64..10.0,
        h in 0.01f64..100.0,
        n in 4usize..100_000,
        d in 1usize..3,
    ) {
        let a = lambda_step(f_norm, misfit, h, n, d).unwrap();
        let b = lambda_step(f_norm, misfit * 1.5, h, n, d).unwrap();
        let c = lambda_step(f_norm * 1.5, misfit, h, n, d).unwrap();
        prop_assert!(a > 0.0 && a.is_finite());
        prop_assert!(b > a);
        prop_assert!(c < a);
    }
}
