//! JSON run configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptOptions, InitialLambda};
use crate::error::{Error, Result};
use crate::forward::{ForwardConfig, StepSolverKind, DEFAULT_DT};
use crate::grid::{read_numeric_csv, Field, Grid};
use crate::observe::{NoiseKind, NoiseModel, Observation, Placement, SensorSet, WeightRule};
use crate::operators::{assemble, Coefficients, EllipticOperator, MassKind};
use crate::presets::InitialCondition;
use crate::tikhonov::{Method, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub lower: f64,
    #[serde(default = "default_upper")]
    pub upper: f64,
    /// Nodes per axis, boundary included.
    pub nodes: usize,
}

fn default_dim() -> usize {
    2
}

fn default_upper() -> f64 {
    PI
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::uniform(self.dim, self.lower, self.upper, self.nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        #[serde(default = "one")]
        a: f64,
        #[serde(default)]
        c: f64,
    },
    /// CSV with rows `x[,y],a,c` in node order.
    Table { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Constant { a: 1.0, c: 0.0 }
    }
}

impl CoefficientSpec {
    pub fn build(&self, grid: &Grid) -> Result<Coefficients> {
        match self {
            CoefficientSpec::Constant { a, c } => Ok(Coefficients::constant(grid, *a, *c)),
            CoefficientSpec::Table { path } => {
                let rows = read_numeric_csv(std::fs::File::open(path)?, grid.dim() + 2)?;
                if rows.len() != grid.node_count() {
                    return Err(Error::LengthMismatch { expected: grid.node_count(), got: rows.len() });
                }
                let d = grid.dim();
                Ok(Coefficients { a: rows.iter().map(|r| r[d]).collect(), c: rows.iter().map(|r| r[d + 1]).collect() })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub per_axis: usize,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub weights: WeightRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Fixed,
    #[default]
    Adaptive,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSpec {
    #[serde(default)]
    pub mode: LambdaMode,
    /// Used by fixed mode and as the Monte Carlo lambda.
    pub value: Option<f64>,
    #[serde(default)]
    pub initial: InitialLambda,
    #[serde(default = "default_lambda_tol")]
    pub tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    pub h2_override: Option<f64>,
    #[serde(default)]
    pub sweep: SweepGrid,
}

fn default_lambda_tol() -> f64 {
    1e-3
}

fn default_max_outer() -> usize {
    25
}

impl Default for LambdaSpec {
    fn default() -> Self {
        Self {
            mode: LambdaMode::Adaptive,
            value: None,
            initial: InitialLambda::Rule,
            tol: default_lambda_tol(),
            max_outer: default_max_outer(),
            h2_override: None,
            sweep: SweepGrid::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub lo: f64,
    pub hi: f64,
    pub per_decade: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { lo: 1e-7, hi: 1.0, per_decade: 24 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub mass: MassKind,
    #[serde(default)]
    pub step_solver: StepSolverKind,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { method: Method::CgNormal, tol: DEFAULT_TOL, max_iter: None, mass: MassKind::Lumped, step_solver: StepSolverKind::Auto }
    }
}

impl SolverSpec {
    pub fn max_iter(&self) -> usize {
        self.max_iter.unwrap_or(self.method.default_max_iter())
    }
}

/// Where to read a saved observation instead of generating one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFiles {
    pub csv: PathBuf,
    pub metadata: PathBuf,
}

/// Settings of the `experiment` subcommand; unused fields are ignored by
/// kinds that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub replications: usize,
    /// Noise draws averaged per lambda in sweeps.
    pub sweep_replications: usize,
    pub sigmas: Vec<f64>,
    pub per_axis_values: Vec<usize>,
    pub amplitudes: Vec<f64>,
    /// Fraction of `T` below which decay times are excluded from the fit.
    pub decay_t_min_fraction: f64,
    pub decay_points: usize,
    pub modes: usize,
    pub spectral_t_points: usize,
    pub spectral_lambda_points: usize,
    pub spectral_lambda_lo: f64,
    pub spectral_lambda_hi: f64,
    /// Acceptance brackets `[lo, hi]` by metric name.
    pub brackets: BTreeMap<String, [f64; 2]>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            replications: 1000,
            sweep_replications: 20,
            sigmas: vec![0.025, 0.05, 0.1, 0.2, 0.4, 0.8],
            per_axis_values: vec![10, 14, 20, 28, 40, 57, 80, 100],
            amplitudes: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            decay_t_min_fraction: 0.2,
            decay_points: 17,
            modes: 32,
            spectral_t_points: 10,
            spectral_lambda_points: 10,
            spectral_lambda_lo: 1e-8,
            spectral_lambda_hi: 1.0,
            brackets: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    pub final_time: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub initial_condition: InitialCondition,
    pub sensors: SensorSpec,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub lambda: LambdaSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Times written by the forward command; defaults to `[T]`.
    #[serde(default)]
    pub output_times: Vec<f64>,
    pub observation: Option<ObservationFiles>,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every precondition that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        self.coefficients.build(&grid)?.validate(&grid)?;
        if !(self.final_time > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("final_time and dt must be positive".into()));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be nonnegative, got {}", self.noise.sigma)));
        }
        if !(self.lambda.tol > 0.0) {
            return Err(Error::Config("lambda tol must be positive".into()));
        }
        if let Some(v) = self.lambda.value {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("lambda value must be positive, got {v}")));
            }
        }
        if self.lambda.mode == LambdaMode::Fixed && self.lambda.value.is_none() {
            return Err(Error::Config("fixed lambda mode needs lambda.value".into()));
        }
        let s = &self.lambda.sweep;
        if !(s.lo > 0.0 && s.hi >= s.lo && s.per_decade > 0) {
            return Err(Error::Config("lambda sweep needs 0 < lo <= hi and per_decade > 0".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == Some(0) {
            return Err(Error::Config("solver tol must be positive and max_iter at least 1".into()));
        }
        for &t in &self.output_times {
            if !(0.0..=self.final_time).contains(&t) {
                return Err(Error::Config(format!("output time {t} outside [0, {}]", self.final_time)));
            }
        }
        if let InitialCondition::Csv { path } = &self.initial_condition {
            if !std::path::Path::new(path).exists() {
                return Err(Error::Config(format!("initial condition file {path} not found")));
            }
        }
        if let Some(files) = &self.observation {
            for p in [&files.csv, &files.metadata] {
                if !p.exists() {
                    return Err(Error::Config(format!("observation file {} not found", p.display())));
                }
            }
        }
        for (name, [lo, hi]) in &self.experiment.brackets {
            if !(lo <= hi) {
                return Err(Error::Config(format!("bracket {name} has lo > hi")));
            }
        }
        self.sensor_set(&grid)?;
        self.forward_config(Arc::new(self.operator_on(&grid)?))?;
        Ok(())
    }

    pub fn operator_on(&self, grid: &Grid) -> Result<EllipticOperator> {
        assemble(grid, &self.coefficients.build(grid)?, self.solver.mass)
    }

    pub fn forward_config(&self, op: Arc<EllipticOperator>) -> Result<ForwardConfig> {
        ForwardConfig::with_solver(op, self.final_time, self.dt, self.solver.step_solver)
    }

    pub fn sensor_set(&self, grid: &Grid) -> Result<SensorSet> {
        self.sensors_with(grid, self.sensors.per_axis)
    }

    pub fn sensors_with(&self, grid: &Grid, per_axis: usize) -> Result<SensorSet> {
        SensorSet::on_lattice(grid, per_axis, self.sensors.placement, self.sensors.weights)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.noise.kind, self.noise.sigma, self.seed)
    }

    pub fn adapt_options(&self) -> AdaptOptions {
        AdaptOptions {
            tol: self.lambda.tol,
            max_outer: self.lambda.max_outer,
            initial: self.lambda.initial,
            method: self.solver.method,
            inner_tol: self.solver.tol,
            h2_override: self.lambda.h2_override,
        }
    }
}

/// Everything needed to generate data and invert, built from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid,
    pub forward: ForwardConfig,
    pub sensors: SensorSet,
    pub f_star: Field,
    pub noise: NoiseModel,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid.build()?;
        let forward = cfg.forward_config(Arc::new(cfg.operator_on(&grid)?))?;
        Ok(Self {
            sensors: cfg.sensor_set(&grid)?,
            f_star: cfg.initial_condition.field(&grid)?,
            noise: cfg.noise_model()?,
            forward,
            grid,
        })
    }

    /// The configured observation: loaded from disk when files are given,
    /// otherwise generated from the initial condition on noise stream 0.
    pub fn observation(&self, cfg: &ExperimentConfig) -> Result<Observation> {
        match &cfg.observation {
            Some(files) => Observation::read(
                &self.grid,
                std::fs::File::open(&files.csv)?,
                std::fs::File::open(&files.metadata)?,
            ),
            None => crate::observe::observe_named(
                &self.forward,
                &self.f_star,
                &self.sensors,
                &self.noise,
                cfg.initial_condition.name(),
            ),
        }
    }
}
