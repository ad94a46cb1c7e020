mod common;

use bhcp::grid::Field;
use bhcp::observe::{observe, NoiseModel, Placement, SensorSet};
use bhcp::operators::MassKind;
use bhcp::tikhonov::{evaluate_J, gradient_J, TikhonovProblem};
use common::*;
use proptest::prelude::*;

fn directional_error(p: &TikhonovProblem, f: &Field, dir: &Field, step: f64) -> f64 {
    let g = gradient_J(p, f).unwrap();
    let op = p.config().operator();
    let analytic = op.mass_dot(&g.interior_values(), &dir.interior_values());
    let plus = evaluate_J(p, &f.axpy(step, dir).unwrap()).unwrap();
    let minus = evaluate_J(p, &f.axpy(-step, dir).unwrap()).unwrap();
    let fd = (plus - minus) / (2.0 * step);
    (analytic - fd).abs() / analytic.abs().max(1e-300)
}

#[test]
fn gradient_matches_central_differences() {
    let g = square(17);
    let cfg = heat(&g, MassKind::Lumped, 0.1, 1e-3);
    let sensors = SensorSet::uniform_with(&g, 20, Placement::Interpolated).unwrap();
    let obs = observe(&cfg, &sines(&g, 2.0), &sensors, &NoiseModel::gaussian(0.05, 1)).unwrap();
    let p = TikhonovProblem::new(&cfg, &obs, 3.9e-4).unwrap();
    let mut r = rng(5);
    for _ in 0..3 {
        let f = random_field(&g, &mut r);
        for _ in 0..5 {
            let dir = random_field(&g, &mut r);
            let e = directional_error(&p, &f, &dir, 1e-5);
            assert!(e <= 1e-6, "relative error {e}");
        }
    }
}

#[test]
fn gradient_vanishes_at_the_minimizer() {
    let g = square(9);
    let cfg = heat(&g, MassKind::Lumped, 0.05, 1e-2);
    let sensors = SensorSet::uniform_with(&g, 6, Placement::Interpolated).unwrap();
    let obs = observe(&cfg, &sines(&g, 1.0), &sensors, &NoiseModel::gaussian(0.1, 2)).unwrap();
    let p = TikhonovProblem::new(&cfg, &obs, 1e-2).unwrap();
    let f = bhcp::tikhonov::direct_solve_small(&p).unwrap();
    let grad = gradient_J(&p, &f).unwrap();
    let scale = gradient_J(&p, &Field::zeros(&g)).unwrap();
    let op = cfg.operator();
    assert!(op.mass_norm(&grad.interior_values()) <= 1e-10 * op.mass_norm(&scale.interior_values()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_check_holds_for_any_lambda(log_lambda in -6.0f64..1.0, seed in 0u64..500) {
        let g = square(9);
        let cfg = heat(&g, MassKind::Consistent, 0.05, 1e-2);
        let sensors = SensorSet::uniform_with(&g, 5, Placement::Interpolated).unwrap();
        let obs = observe(&cfg, &sines(&g, 1.0), &sensors, &NoiseModel::gaussian(0.1, seed)).unwrap();
        let p = TikhonovProblem::new(&cfg, &obs, 10f64.powf(log_lambda)).unwrap();
        let mut r = rng(seed);
        let f = random_field(&g, &mut r);
        let dir = random_field(&g, &mut r);
        prop_assert!(directional_error(&p, &f, &dir, 1e-5) <= 1e-6);
    }

    #[test]
    fn objective_is_convex_along_lines(seed in 0u64..500, t in 0.0f64..1.0) {
        let g = square(9);
        let cfg = heat(&g, MassKind::Lumped, 0.05, 1e-2);
        let sensors = SensorSet::uniform_with(&g, 5, Placement::Interpolated).unwrap();
        let obs = observe(&cfg, &sines(&g, 1.0), &sensors, &NoiseModel::gaussian(0.1, seed)).unwrap();
        let p = TikhonovProblem::new(&cfg, &obs, 1e-3).unwrap();
        let mut r = rng(seed);
        let a = random_field(&g, &mut r);
        let b = random_field(&g, &mut r);
        let mid = a.scaled(1.0 - t).unwrap().axpy(t, &b).unwrap();
        let lhs = evaluate_J(&p, &mid).unwrap();
        let rhs = (1.0 - t) * evaluate_J(&p, &a).unwrap() + t * evaluate_J(&p, &b).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15);
    }
}
