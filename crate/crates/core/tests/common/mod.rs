#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use bhcp::forward::ForwardConfig;
use bhcp::grid::{Field, Grid};
use bhcp::observe::{Placement, SensorSet};
use bhcp::operators::{assemble, Coefficients, MassKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn square(nodes: usize) -> Grid {
    Grid::uniform(2, 0.0, PI, nodes).unwrap()
}

pub fn heat(grid: &Grid, mass: MassKind, final_time: f64, dt: f64) -> ForwardConfig {
    let op = assemble(grid, &Coefficients::constant(grid, 1.0, 0.0), mass).unwrap();
    ForwardConfig::new(Arc::new(op), final_time, dt).unwrap()
}

/// One sensor per interior node with weight equal to the lumped mass.
pub fn all_nodes(grid: &Grid) -> SensorSet {
    let h2: f64 = grid.spacing().iter().product();
    let pts: Vec<_> = (0..grid.interior_count()).map(|k| grid.point(grid.interior_to_node(k))).collect();
    let n = pts.len();
    SensorSet::from_points(grid, pts, vec![h2; n], Placement::Nodal).unwrap()
}

pub fn random_interior(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..grid.interior_count()).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
    Field::from_interior(grid, &random_interior(grid, rng)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sines(grid: &Grid, k: f64) -> Field {
    Field::from_fn(grid, |p| (k * p[0]).sin() * (k * p[1]).sin()).unwrap().clamp_boundary()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
