//! Point sensors, the weighted empirical inner product and synthetic noisy
//! observations of the terminal state.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardConfig;
use crate::grid::{fmt_num, read_numeric_csv, Field, Grid, Point};

/// How sensor values are read from a nodal field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Every sensor sits on a grid node.
    #[default]
    Nodal,
    /// Sensors anywhere in the domain; values are the piecewise-linear
    /// finite-element interpolant.
    Interpolated,
}

/// Quadrature weight assigned to each of the `n` sensors of a lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `|Omega| / n`, so that `||u||_n` approximates the L2 norm.
    #[default]
    Volume,
    /// `1 / n`, the mean square over sensors.
    Unit,
    /// Lattice cell volume `prod_k L_k / (p + 1)`: the trapezoid rule for
    /// fields vanishing on the boundary.
    Cell,
}

impl WeightRule {
    /// Weight of each sensor of a lattice with `per_axis` points per axis.
    pub fn weight(self, grid: &Grid, per_axis: usize) -> f64 {
        let n = per_axis.pow(grid.dim() as u32);
        match self {
            WeightRule::Volume => grid.volume() / n as f64,
            WeightRule::Unit => 1.0 / n as f64,
            WeightRule::Cell => grid.axes().iter().map(|a| a.length() / (per_axis + 1) as f64).product(),
        }
    }
}

/// Sensor positions `lower + i * L / (p + 1)`, `i = 1..=p`, on each axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub per_axis: Vec<usize>,
}

impl Lattice {
    /// Grid whose interior nodes are the lattice points; its boundary is the
    /// domain boundary.
    pub fn grid(&self, domain: &Grid) -> Result<Grid> {
        let bounds: Vec<(f64, f64)> = domain.axes().iter().map(|a| (a.lower, a.upper)).collect();
        let nodes: Vec<usize> = self.per_axis.iter().map(|p| p + 2).collect();
        Grid::new(domain.dim(), &bounds, &nodes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Uniformity {
    /// Largest distance from a point of the domain to its nearest sensor.
    pub d_max: f64,
    /// Smallest distance between two sensors.
    pub d_min: f64,
}

impl Uniformity {
    pub fn ratio(&self) -> f64 {
        self.d_max / self.d_min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSet {
    grid: Grid,
    points: Vec<Point>,
    weights: Vec<f64>,
    /// Per sensor: (interior index, interpolation coefficient).
    stencils: Vec<Vec<(usize, f64)>>,
    placement: Placement,
    lattice: Option<Lattice>,
}

impl SensorSet {
    /// Equispaced interior lattice with `per_axis` sensors per axis on grid
    /// nodes, weights `|Omega| / n`.
    pub fn uniform(grid: &Grid, per_axis: usize) -> Result<Self> {
        Self::uniform_with(grid, per_axis, Placement::Nodal)
    }

    pub fn uniform_with(grid: &Grid, per_axis: usize, placement: Placement) -> Result<Self> {
        Self::on_lattice(grid, per_axis, placement, WeightRule::Volume)
    }

    pub fn on_lattice(grid: &Grid, per_axis: usize, placement: Placement, rule: WeightRule) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::Sensor(format!("need at least 2 sensors per axis, got {per_axis}")));
        }
        let coords: Vec<Vec<f64>> = grid
            .axes()
            .iter()
            .map(|a| (1..=per_axis).map(|i| a.lower + i as f64 * a.length() / (per_axis + 1) as f64).collect())
            .collect();
        let points: Vec<Point> = match grid.dim() {
            1 => coords[0].iter().map(|&x| [x, 0.0]).collect(),
            _ => coords[0].iter().flat_map(|&x| coords[1].iter().map(move |&y| [x, y])).collect(),
        };
        let n = points.len();
        let weights = vec![rule.weight(grid, per_axis); n];
        let mut set = Self::from_points(grid, points, weights, placement)?;
        set.lattice = Some(Lattice { per_axis: vec![per_axis; grid.dim()] });
        Ok(set)
    }

    pub fn from_points(grid: &Grid, points: Vec<Point>, weights: Vec<f64>, placement: Placement) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch { expected: points.len(), got: weights.len() });
        }
        if points.is_empty() {
            return Err(Error::Sensor("empty sensor set".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Sensor(format!("weights must be positive, got {w}")));
        }
        let stencils = points
            .iter()
            .map(|p| match placement {
                Placement::Nodal => nodal_stencil(grid, p),
                Placement::Interpolated => interpolation_stencil(grid, p),
            })
            .collect::<Result<_>>()?;
        Ok(Self { grid: grid.clone(), points, weights, stencils, placement, lattice: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Quadrature weights `w_i^2`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    pub fn uniformity(&self) -> Uniformity {
        let d = self.grid.dim();
        let mut d_min = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in 0..i {
                let dist = distance(&self.points[i], &self.points[j], d);
                d_min = d_min.min(dist);
            }
        }
        let d_max = match &self.lattice {
            Some(lat) => self
                .grid
                .axes()
                .iter()
                .zip(&lat.per_axis)
                .map(|(a, &p)| {
                    // Boundary gap equals the lattice spacing.
                    let s = a.length() / (p + 1) as f64;
                    s * s
                })
                .sum::<f64>()
                .sqrt(),
            None => (0..self.grid.node_count())
                .map(|k| {
                    let x = self.grid.point(k);
                    self.points.iter().map(|p| distance(&x, p, d)).fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max),
        };
        Uniformity { d_max, d_min }
    }

    /// Sensor values of interior nodal data.
    pub fn sample_interior(&self, u: &[f64]) -> Vec<f64> {
        self.stencils.iter().map(|s| s.iter().map(|&(j, c)| c * u[j]).sum()).collect()
    }

    pub fn sample(&self, u: &Field) -> Result<Vec<f64>> {
        self.check_grid(u.grid())?;
        Ok(self.sample_interior(&u.interior_values()))
    }

    /// `z_j = sum_i w_i^2 r_i c_ij`, the transpose of weighted sampling.
    pub fn scatter_weighted(&self, grid: &Grid, r: &[f64]) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        if r.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: r.len() });
        }
        let mut z = vec![0.0; grid.interior_count()];
        for ((s, w), ri) in self.stencils.iter().zip(&self.weights).zip(r) {
            for &(j, c) in s {
                z[j] += w * ri * c;
            }
        }
        Ok(z)
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid != &self.grid {
            return Err(Error::Sensor("sensor set was placed on a different grid".into()));
        }
        Ok(())
    }
}

fn distance(a: &Point, b: &Point, dim: usize) -> f64 {
    (0..dim).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn nodal_stencil(grid: &Grid, p: &Point) -> Result<Vec<(usize, f64)>> {
    let idx = grid
        .locate_node(p)
        .ok_or_else(|| Error::Sensor(format!("sensor at {:?} is not on a grid node", &p[..grid.dim()])))?;
    Ok(grid.node_to_interior(idx).map(|k| vec![(k, 1.0)]).unwrap_or_default())
}

fn interpolation_stencil(grid: &Grid, p: &Point) -> Result<Vec<(usize, f64)>> {
    let mut cell = [0usize; 2];
    let mut local = [0.0; 2];
    for (k, a) in grid.axes().iter().enumerate() {
        if p[k] < a.lower - 1e-12 || p[k] > a.upper + 1e-12 {
            return Err(Error::Sensor(format!("sensor at {:?} lies outside the domain", &p[..grid.dim()])));
        }
        let s = ((p[k] - a.lower) / a.spacing()).clamp(0.0, (a.nodes - 1) as f64);
        let c = (s.floor() as usize).min(a.nodes - 2);
        cell[k] = c;
        local[k] = s - c as f64;
    }
    let corner = |dx: usize, dy: usize| grid.linear_index([cell[0] + dx, cell[1] + dy]);
    let mut terms: Vec<(usize, f64)> = match grid.dim() {
        1 => vec![(corner(0, 0), 1.0 - local[0]), (corner(1, 0), local[0])],
        _ => {
            let (xi, eta) = (local[0], local[1]);
            // Same diagonal split as the stiffness assembly.
            if xi >= eta {
                vec![(corner(0, 0), 1.0 - xi), (corner(1, 0), xi - eta), (corner(1, 1), eta)]
            } else {
                vec![(corner(0, 0), 1.0 - eta), (corner(1, 1), xi), (corner(0, 1), eta - xi)]
            }
        }
    };
    terms.retain(|&(_, c)| c.abs() > 1e-15);
    Ok(terms.into_iter().filter_map(|(g, c)| grid.node_to_interior(g).map(|k| (k, c))).collect())
}

/// `(u, v)_n = sum_i w_i^2 u_i v_i`.
pub fn empirical_inner(sensors: &SensorSet, u: &[f64], v: &[f64]) -> Result<f64> {
    for x in [u, v] {
        if x.len() != sensors.len() {
            return Err(Error::LengthMismatch { expected: sensors.len(), got: x.len() });
        }
    }
    Ok(sensors.weights.iter().zip(u).zip(v).map(|((w, a), b)| w * a * b).sum())
}

pub fn empirical_norm(sensors: &SensorSet, u: &[f64]) -> Result<f64> {
    Ok(empirical_inner(sensors, u, u)?.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Uniform,
    Rademacher,
}

/// Zero-mean i.i.d. noise with standard deviation `sigma`.
///
/// Draws come from ChaCha8 seeded with `seed`; replication `r` uses stream
/// `r`, so every replication is reproducible independently of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
        }
        Ok(Self { kind, sigma, seed })
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Gaussian, sigma, seed }
    }

    pub fn sample(&self, n: usize, stream: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let s = self.sigma;
        match self.kind {
            NoiseKind::Gaussian => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect(),
            NoiseKind::Uniform => {
                let half = 3f64.sqrt();
                let u = Uniform::new(-half, half).expect("valid range");
                (0..n).map(|_| s * u.sample(&mut rng)).collect()
            }
            NoiseKind::Rademacher => {
                let u = Uniform::new(0u8, 2).expect("valid range");
                (0..n).map(|_| if u.sample(&mut rng) == 0 { -s } else { s }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Name of the initial condition that generated the data.
    pub truth: String,
    pub noise: NoiseModel,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sensors: SensorSet,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationMeta {
    kind: NoiseKind,
    sigma: f64,
    seed: u64,
    stream: u64,
    truth: String,
    placement: Placement,
    lattice: Option<Lattice>,
    weights: Vec<f64>,
}

impl Observation {
    /// Noisy sensor data `m_i = clean_i + e_i` from precomputed clean values.
    pub fn from_clean(
        sensors: &SensorSet,
        clean: &[f64],
        noise: &NoiseModel,
        stream: u64,
        truth: &str,
    ) -> Result<Self> {
        if clean.len() != sensors.len() {
            return Err(Error::LengthMismatch { expected: sensors.len(), got: clean.len() });
        }
        let e = noise.sample(clean.len(), stream);
        let values = clean.iter().zip(&e).map(|(u, e)| u + e).collect();
        Ok(Self {
            sensors: sensors.clone(),
            values,
            provenance: Provenance { truth: truth.to_string(), noise: *noise, stream },
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `x[,y],m` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.sensors.grid().dim();
        writeln!(w, "{}", if d == 1 { "x,m" } else { "x,y,m" })?;
        for (p, m) in self.sensors.points().iter().zip(&self.values) {
            if d == 1 {
                writeln!(w, "{},{}", p[0], fmt_num(*m))?;
            } else {
                writeln!(w, "{},{},{}", p[0], p[1], fmt_num(*m))?;
            }
        }
        Ok(())
    }

    pub fn write_metadata<W: Write>(&self, w: W) -> Result<()> {
        let meta = ObservationMeta {
            kind: self.provenance.noise.kind,
            sigma: self.provenance.noise.sigma,
            seed: self.provenance.noise.seed,
            stream: self.provenance.stream,
            truth: self.provenance.truth.clone(),
            placement: self.sensors.placement(),
            lattice: self.sensors.lattice().cloned(),
            weights: self.sensors.weights().to_vec(),
        };
        serde_json::to_writer_pretty(w, &meta)?;
        Ok(())
    }

    /// Reads an observation written by [`Observation::write_csv`] and
    /// [`Observation::write_metadata`], rebuilding sensors on `grid`.
    pub fn read<R1: Read, R2: Read>(grid: &Grid, csv: R1, metadata: R2) -> Result<Self> {
        let meta: ObservationMeta = serde_json::from_reader(metadata)?;
        let rows = read_numeric_csv(csv, grid.dim() + 1)?;
        let mut points = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for row in rows {
            let mut p = [0.0; 2];
            p[..grid.dim()].copy_from_slice(&row[..grid.dim()]);
            points.push(p);
            values.push(row[grid.dim()]);
        }
        if meta.weights.len() != points.len() {
            return Err(Error::LengthMismatch { expected: points.len(), got: meta.weights.len() });
        }
        let mut sensors = SensorSet::from_points(grid, points, meta.weights, meta.placement)?;
        sensors.lattice = meta.lattice;
        Ok(Self {
            sensors,
            values,
            provenance: Provenance {
                truth: meta.truth,
                noise: NoiseModel { kind: meta.kind, sigma: meta.sigma, seed: meta.seed },
                stream: meta.stream,
            },
        })
    }
}

/// Clean terminal-state sensor values `F_T f*(x_i)`.
pub fn clean_data(cfg: &ForwardConfig, f_star: &Field, sensors: &SensorSet) -> Result<Vec<f64>> {
    if f_star.grid() != cfg.grid() {
        return Err(Error::GridMismatch);
    }
    let u = cfg.forward_interior(&f_star.interior_values());
    sensors.check_grid(cfg.grid())?;
    Ok(sensors.sample_interior(&u))
}

/// Synthetic observation `m_i = F_T f*(x_i) + e_i`, stream 0 of the noise
/// model.
pub fn observe(cfg: &ForwardConfig, f_star: &Field, sensors: &SensorSet, noise: &NoiseModel) -> Result<Observation> {
    observe_named(cfg, f_star, sensors, noise, "unnamed")
}

pub fn observe_named(
    cfg: &ForwardConfig,
    f_star: &Field,
    sensors: &SensorSet,
    noise: &NoiseModel,
    truth: &str,
) -> Result<Observation> {
    let clean = clean_data(cfg, f_star, sensors)?;
    Observation::from_clean(sensors, &clean, noise, 0, truth)
}
