mod common;

use std::f64::consts::PI;

use bhcp::analysis::fit_slope;
use bhcp::grid::{Field, Grid};
use bhcp::observe::*;
use bhcp::operators::MassKind;
use common::*;
use proptest::prelude::*;

#[test]
fn reference_lattices_have_expected_sizes_and_weights() {
    let g = square(17);
    let s = SensorSet::uniform_with(&g, 20, Placement::Interpolated).unwrap();
    assert_eq!(s.len(), 400);
    for w in s.weights() {
        assert!((w - PI * PI / 400.0).abs() < 1e-15);
    }
    assert!((s.weights().iter().sum::<f64>() - PI * PI).abs() < 1e-9);
    let g52 = square(52);
    let s = SensorSet::uniform(&g52, 50).unwrap();
    assert_eq!(s.len(), 2500);
    assert!((s.weights().iter().sum::<f64>() - PI * PI).abs() < 1e-9);
}

#[test]
fn smallest_layout_in_one_dimension() {
    let g = Grid::uniform(1, 0.0, 1.0, 4).unwrap();
    let s = SensorSet::uniform(&g, 2).unwrap();
    assert_eq!(s.len(), 2);
    let u = s.uniformity();
    assert!(u.ratio().is_finite() && u.ratio() > 0.0);
    assert!((u.d_min - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn empirical_norm_examples() {
    let g = square(5);
    let pts: Vec<_> = (0..4).map(|k| g.point(g.interior_to_node(k))).collect();
    let s = SensorSet::from_points(&g, pts, vec![0.25; 4], Placement::Nodal).unwrap();
    let n = empirical_norm(&s, &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((n - 7.5f64.sqrt()).abs() < 1e-14);
    let lat = SensorSet::uniform(&square(9), 7).unwrap();
    let ones = vec![1.0; lat.len()];
    assert!((empirical_norm(&lat, &ones).unwrap() - PI).abs() < 1e-12);
    assert!(empirical_inner(&s, &[1.0; 3], &[1.0; 4]).is_err());
}

#[test]
fn noiseless_observation_is_the_sampled_terminal_state() {
    let g = square(17);
    let cfg = heat(&g, MassKind::Lumped, 0.1, 1e-3);
    let s = SensorSet::uniform(&g, 15).unwrap();
    let f = sines(&g, 2.0);
    let obs = observe(&cfg, &f, &s, &NoiseModel::gaussian(0.0, 9)).unwrap();
    let u = cfg.forward_solve(&f, 0.1).unwrap();
    assert_eq!(obs.values, s.sample(&u).unwrap());
}

#[test]
fn gaussian_noise_statistics() {
    let g = square(33);
    let cfg = heat(&g, MassKind::Lumped, 0.1, 1e-3);
    let f = sines(&g, 2.0);
    let mut means = Vec::new();
    for p in [10, 30, 100] {
        let s = SensorSet::uniform_with(&g, p, Placement::Interpolated).unwrap();
        let clean = clean_data(&cfg, &f, &s).unwrap();
        let obs = Observation::from_clean(&s, &clean, &NoiseModel::gaussian(0.05, 4), 0, "smooth").unwrap();
        let res: Vec<f64> = obs.values.iter().zip(&clean).map(|(a, b)| a - b).collect();
        let (mean, std) = bhcp::analysis::mean_std(&res);
        means.push(mean.abs());
        if p == 100 {
            assert!((std - 0.05).abs() <= 0.005, "std {std}");
        }
        assert!(mean.abs() <= 4.0 * 0.05 / (res.len() as f64).sqrt());
    }
}

#[test]
fn rademacher_residuals_are_plus_minus_sigma() {
    let noise = NoiseModel::new(NoiseKind::Rademacher, 0.3, 2).unwrap();
    let draws = noise.sample(1000, 5);
    assert!(draws.iter().all(|&e| e == 0.3 || e == -0.3));
    assert!(draws.iter().any(|&e| e > 0.0) && draws.iter().any(|&e| e < 0.0));
    let uniform = NoiseModel::new(NoiseKind::Uniform, 0.3, 2).unwrap().sample(10_000, 0);
    let (m, s) = bhcp::analysis::mean_std(&uniform);
    assert!(m.abs() < 0.02 && (s - 0.3).abs() < 0.01);
    assert!(uniform.iter().all(|e| e.abs() <= 0.3 * 3f64.sqrt()));
}

#[test]
fn noise_mean_over_many_draws() {
    let n = 100;
    let noise = NoiseModel::gaussian(1.0, 11);
    let total: f64 = (0..10_000u64).map(|r| noise.sample(n, r).iter().sum::<f64>()).sum();
    let mean = total / (10_000.0 * n as f64);
    assert!(mean.abs() <= 3.0 / ((10_000 * n) as f64).sqrt());
}

#[test]
fn streams_are_distinct_and_reproducible() {
    let noise = NoiseModel::gaussian(0.1, 77);
    assert_eq!(noise.sample(50, 3), noise.sample(50, 3));
    assert_ne!(noise.sample(50, 3), noise.sample(50, 4));
    assert_ne!(noise.sample(50, 3), NoiseModel::gaussian(0.1, 78).sample(50, 3));
    assert!(NoiseModel::new(NoiseKind::Gaussian, -1.0, 0).is_err());
}

#[test]
fn observation_files_round_trip() {
    let g = square(17);
    let cfg = heat(&g, MassKind::Lumped, 0.1, 1e-3);
    let s = SensorSet::on_lattice(&g, 20, Placement::Interpolated, WeightRule::Unit).unwrap();
    let obs = observe_named(&cfg, &sines(&g, 2.0), &s, &NoiseModel::gaussian(0.05, 1), "smooth").unwrap();
    let (mut csv, mut meta) = (Vec::new(), Vec::new());
    obs.write_csv(&mut csv).unwrap();
    obs.write_metadata(&mut meta).unwrap();
    let back = Observation::read(&g, csv.as_slice(), meta.as_slice()).unwrap();
    assert_eq!(back.values, obs.values);
    assert_eq!(back.sensors.points(), obs.sensors.points());
    assert_eq!(back.sensors.weights(), obs.sensors.weights());
    assert_eq!(back.provenance, obs.provenance);
}

#[test]
fn nodal_placement_rejects_off_node_sensors() {
    let g = square(17);
    assert!(SensorSet::uniform(&g, 20).is_err());
    assert!(SensorSet::uniform(&g, 15).is_ok());
    assert!(SensorSet::uniform(&g, 1).is_err());
}

/// `||u||_n` against the exact L2 norm of a smooth field vanishing on the
/// boundary, sampled exactly at the sensors.
fn consistency_errors(rule: WeightRule) -> (Vec<f64>, Vec<f64>) {
    let u = |p: [f64; 2]| p[0] * (PI - p[0]) * p[1] * (PI - p[1]) * ((p[0] + 2.0 * p[1]) / 4.0).exp();
    // Reference L2 norm from a fine trapezoid sum.
    let fine = 4000;
    let h = PI / fine as f64;
    let mut sum = 0.0;
    for i in 1..fine {
        for j in 1..fine {
            sum += u([i as f64 * h, j as f64 * h]).powi(2) * h * h;
        }
    }
    let exact = sum.sqrt();
    let g = square(5);
    let mut d = Vec::new();
    let mut e = Vec::new();
    for p in [8, 16, 32, 64] {
        let s = SensorSet::on_lattice(&g, p, Placement::Interpolated, rule).unwrap();
        let vals: Vec<f64> = s.points().iter().map(|&x| u(x)).collect();
        d.push(s.uniformity().d_max);
        e.push((empirical_norm(&s, &vals).unwrap() - exact).abs());
    }
    (d, e)
}

#[test]
fn norm_consistency_rate_with_cell_weights() {
    let (d, e) = consistency_errors(WeightRule::Cell);
    let rate = fit_slope(&d, &e, true).unwrap().slope;
    assert!(rate >= 1.8, "observed rate {rate}, errors {e:?}");
}

#[test]
fn norm_consistency_rate_with_volume_weights_is_first_order() {
    // |Omega|/n over-weights an interior lattice by (1 + 1/p)^d.
    let (d, e) = consistency_errors(WeightRule::Volume);
    let rate = fit_slope(&d, &e, true).unwrap().slope;
    assert!((rate - 1.0).abs() < 0.15, "observed rate {rate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn seeded_observations_are_bit_identical(seed in 0u64..10_000, stream in 0u64..100) {
        let noise = NoiseModel::gaussian(0.2, seed);
        prop_assert_eq!(noise.sample(37, stream), noise.sample(37, stream));
    }

    #[test]
    fn empirical_inner_is_symmetric_and_bilinear(
        u in prop::collection::vec(-10.0f64..10.0, 16),
        v in prop::collection::vec(-10.0f64..10.0, 16),
        a in -2.0f64..2.0,
    ) {
        let s = SensorSet::uniform(&square(11), 4).unwrap();
        let uv = empirical_inner(&s, &u, &v).unwrap();
        prop_assert!((uv - empirical_inner(&s, &v, &u).unwrap()).abs() <= 1e-12 * (1.0 + uv.abs()));
        let au: Vec<f64> = u.iter().map(|x| a * x).collect();
        let lhs = empirical_inner(&s, &au, &v).unwrap();
        prop_assert!((lhs - a * uv).abs() <= 1e-10 * (1.0 + uv.abs()));
        prop_assert!(empirical_norm(&s, &u).unwrap() >= 0.0);
    }

    #[test]
    fn interpolation_reproduces_linear_fields(p in 2usize..25, cx in -1.0f64..1.0, cy in -1.0f64..1.0) {
        let g = square(9);
        let s = SensorSet::uniform_with(&g, p, Placement::Interpolated).unwrap();
        let f = Field::from_fn(&g, |x| 1.0 + cx * x[0] + cy * x[1]).unwrap();
        let vals = s.sample(&f);
        // Boundary nodes are dropped by sampling, so compare only sensors
        // whose cell avoids the boundary.
        let h = PI / 8.0;
        for (x, v) in s.points().iter().zip(vals.unwrap()) {
            if x.iter().all(|c| *c > h && *c < PI - h) {
                prop_assert!((v - (1.0 + cx * x[0] + cy * x[1])).abs() < 1e-12);
            }
        }
    }
}
