mod common;

use std::sync::Arc;

use bhcp::forward::ForwardConfig;
use bhcp::grid::{l2_norm, Field};
use bhcp::observe::{Placement, SensorSet};
use bhcp::operators::{assemble, Coefficients, MassKind};
use common::*;
use proptest::prelude::*;

#[test]
fn product_of_sines_decays_at_its_eigenvalue() {
    // Separation of variables: sin(kx)sin(ky) decays like exp(-2k^2 t).
    let g = square(33);
    let cfg = heat(&g, MassKind::Lumped, 0.1, 1e-3);
    for k in [1.0, 2.0] {
        let f = sines(&g, k);
        let u = cfg.forward_solve(&f, 0.1).unwrap();
        let exact = f.scaled((-2.0 * k * k * 0.1_f64).exp()).unwrap();
        let err = l2_norm(&u.sub(&exact).unwrap()) / l2_norm(&exact);
        assert!(err < 2e-2, "k={k}: {err}");
    }
}

#[test]
fn error_shrinks_under_refinement() {
    let mut errs = Vec::new();
    for (nodes, dt) in [(9, 4e-3), (17, 1e-3), (33, 2.5e-4)] {
        let g = square(nodes);
        let cfg = heat(&g, MassKind::Lumped, 0.1, dt);
        let f = sines(&g, 2.0);
        let exact = f.scaled((-0.8_f64).exp()).unwrap();
        let u = cfg.forward_solve(&f, 0.1).unwrap();
        errs.push(l2_norm(&u.sub(&exact).unwrap()) / l2_norm(&exact));
    }
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    // Second order in h with dt ~ h^2.
    assert!(errs[1] / errs[2] > 3.0, "{errs:?}");
}

#[test]
fn constant_reaction_adds_uniform_decay() {
    let g = square(17);
    let make = |c: f64| {
        let op = assemble(&g, &Coefficients::constant(&g, 1.0, c), MassKind::Lumped).unwrap();
        ForwardConfig::new(Arc::new(op), 0.05, 1e-3).unwrap()
    };
    let f = sines(&g, 1.0);
    let u0 = make(0.0).forward_solve(&f, 0.05).unwrap();
    let u1 = make(1.0).forward_solve(&f, 0.05).unwrap();
    // Each backward-Euler step on an eigenvector divides by 1 + dt*mu.
    let mu0 = (l2_norm(&f) / l2_norm(&u0)).powf(1.0 / 50.0);
    let mu1 = (l2_norm(&f) / l2_norm(&u1)).powf(1.0 / 50.0);
    assert!(((mu1 - mu0) / 1e-3 - 1.0).abs() < 1e-8);
}

#[test]
fn twenty_random_adjoint_pairs() {
    let g = square(17);
    let mut r = rng(42);
    for mass in [MassKind::Lumped, MassKind::Consistent] {
        let cfg = heat(&g, mass, 0.1, 1e-3);
        let op = cfg.operator();
        for _ in 0..20 {
            let u = random_interior(&g, &mut r);
            let v = random_interior(&g, &mut r);
            let lhs = op.mass_dot(&cfg.forward_interior(&u), &v);
            let rhs = op.mass_dot(&u, &cfg.adjoint_interior(&v));
            let scale = op.mass_norm(&u) * op.mass_norm(&v);
            assert!((lhs - rhs).abs() <= 1e-10 * scale, "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn sensor_adjoint_identity() {
    let g = square(17);
    let cfg = heat(&g, MassKind::Lumped, 0.1, 1e-3);
    let mut r = rng(7);
    for placement in [Placement::Interpolated, Placement::Nodal] {
        let per_axis = if placement == Placement::Nodal { 15 } else { 20 };
        let sensors = SensorSet::uniform_with(&g, per_axis, placement).unwrap();
        for _ in 0..20 {
            let v = random_interior(&g, &mut r);
            let res: Vec<f64> = (0..sensors.len()).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
            let fv = sensors.sample_interior(&cfg.forward_interior(&v));
            let lhs = bhcp::observe::empirical_inner(&sensors, &res, &fv).unwrap();
            let z = cfg.sensor_adjoint_interior(&sensors, &res).unwrap();
            let rhs = cfg.operator().mass_dot(&z, &v);
            let scale = bhcp::observe::empirical_norm(&sensors, &res).unwrap() * cfg.operator().mass_norm(&v);
            assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
    }
}

fn small_field(values: Vec<f64>) -> Field {
    Field::from_interior(&square(7), &values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 25),
        b in prop::collection::vec(-1.0f64..1.0, 25),
        s in -3.0f64..3.0,
    ) {
        let g = square(7);
        let cfg = heat(&g, MassKind::Lumped, 0.05, 5e-3);
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let lhs = cfg.forward_interior(&combo);
        let fa = cfg.forward_interior(&a);
        let fb = cfg.forward_interior(&b);
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - fa[i] - s * fb[i]).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn lumped_scheme_obeys_maximum_principle(values in prop::collection::vec(-5.0f64..5.0, 25)) {
        let f = small_field(values);
        let cfg = heat(f.grid(), MassKind::Lumped, 0.1, 1e-2);
        let u = cfg.forward_solve(&f, 0.1).unwrap();
        prop_assert!(u.max_abs() <= f.max_abs() * (1.0 + 1e-12));
    }

    #[test]
    fn energy_decays(values in prop::collection::vec(-1.0f64..1.0, 25), mass in prop::bool::ANY) {
        let kind = if mass { MassKind::Consistent } else { MassKind::Lumped };
        let g = square(7);
        let cfg = heat(&g, kind, 0.1, 1e-2);
        let steps: Vec<f64> = [0.0, 0.03, 0.07, 0.1].to_vec();
        let f = Field::from_interior(&g, &values).unwrap();
        let fields = cfg.forward_at_times(&f, &steps).unwrap();
        let norms: Vec<f64> = fields.iter().map(|u| cfg.operator().mass_norm(&u.interior_values())).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn adjoint_identity_on_random_grids(nodes in 4usize..12, seed in 0u64..1000) {
        let g = square(nodes);
        let cfg = heat(&g, MassKind::Lumped, 0.02, 1e-3);
        let mut r = rng(seed);
        let u = random_interior(&g, &mut r);
        let v = random_interior(&g, &mut r);
        let op = cfg.operator();
        let lhs = op.mass_dot(&cfg.forward_interior(&u), &v);
        let rhs = op.mass_dot(&u, &cfg.adjoint_interior(&v));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * op.mass_norm(&u) * op.mass_norm(&v));
    }
}
