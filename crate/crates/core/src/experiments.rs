//! Experiment drivers shared by the command line and the acceptance tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{adapt_lambda, LambdaTrace};
use crate::analysis::{
    bracket, fit_slope, growth_ratios, interior_decay, log_grid, mc_errors, qq_correlation, qq_points,
    relative_errors, spectral_bounds, McProblem, SweepResult,
};
use crate::config::{ExperimentConfig, LambdaMode, Setup};
use crate::error::{Error, Result};
use crate::grid::{fmt_num, l2_norm, Field};
use crate::observe::{clean_data, NoiseModel, Observation, SensorSet};
use crate::operators::{analytic_spectrum, partial_spectrum};
use crate::tikhonov::{minimize, DenseNormalSystem, InversionResult, TikhonovProblem, DENSE_SYSTEM_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Mc,
    SweepSigma,
    SweepN,
    SweepFnorm,
    InteriorDecay,
    SpectralCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Mc => "mc",
            ExperimentKind::SweepSigma => "sweep-sigma",
            ExperimentKind::SweepN => "sweep-n",
            ExperimentKind::SweepFnorm => "sweep-fnorm",
            ExperimentKind::InteriorDecay => "interior-decay",
            ExperimentKind::SpectralCheck => "spectral-check",
        }
    }

    /// Acceptance brackets used when the config gives none for a metric.
    pub fn default_brackets(self) -> BTreeMap<String, [f64; 2]> {
        let entries: &[(&str, [f64; 2])] = match self {
            ExperimentKind::Mc => &[("qq_correlation", [0.99, 1.0]), ("half_mean_gap", [0.0, 1.0])],
            ExperimentKind::SweepSigma => &[("slope", [1.0, 1.5])],
            ExperimentKind::SweepN => &[("slope", [-1.1, -0.5])],
            ExperimentKind::SweepFnorm => &[("slope", [-1.6, -1.0])],
            ExperimentKind::InteriorDecay => &[("relative_deviation", [0.0, 0.1]), ("backward_growth", [1.0, 1.0])],
            ExperimentKind::SpectralCheck => &[("bound_violations", [0.0, 0.0]), ("growth_outside_bracket", [0.0, 0.0])],
        };
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

/// A CSV table; floats are written in shortest round-trip form via [`fmt_num`].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub metric: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub tables: Vec<Table>,
    /// Reconstruction written as `field.csv`, when the experiment makes one.
    #[serde(skip)]
    pub field: Option<Field>,
    #[serde(skip)]
    pub trace: Option<LambdaTrace>,
}

impl ExperimentOutput {
    fn new(kind: ExperimentKind) -> Self {
        Self { kind, metrics: BTreeMap::new(), checks: Vec::new(), tables: Vec::new(), field: None, trace: None }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    fn apply_brackets(&mut self, configured: &BTreeMap<String, [f64; 2]>) {
        let mut brackets = self.kind.default_brackets();
        brackets.extend(configured.iter().map(|(k, v)| (k.clone(), *v)));
        for (metric, [lo, hi]) in brackets {
            let value = self.metrics.get(&metric).copied().unwrap_or(f64::NAN);
            self.checks.push(Check { metric, value, lo, hi, pass: value >= lo && value <= hi });
        }
    }
}

/// Reproducibility record written next to every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Result<Self> {
        let canonical = serde_json::to_string(config)?;
        let digest = Sha256::digest(canonical.as_bytes());
        let hex = digest.iter().map(|b| format!("{b:02x}")).collect::<String>();
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_sha256: hex,
            config: config.clone(),
        })
    }
}

/// Inversion at the configured lambda mode. Sweep mode picks the lambda
/// minimizing the error against the known initial condition.
pub fn invert_configured(
    cfg: &ExperimentConfig,
    setup: &Setup,
    observation: &Observation,
    mode: LambdaMode,
) -> Result<(InversionResult, Option<LambdaTrace>, Option<SweepResult>)> {
    match mode {
        LambdaMode::Fixed => {
            let lambda = cfg.lambda.value.ok_or_else(|| Error::Config("fixed mode needs lambda.value".into()))?;
            Ok((solve_at(cfg, setup, observation, lambda, None)?, None, None))
        }
        LambdaMode::Adaptive => {
            let (trace, result) = adapt_lambda(observation, &setup.forward, &cfg.adapt_options())?;
            Ok((result, Some(trace), None))
        }
        LambdaMode::Sweep => {
            let s = &cfg.lambda.sweep;
            let lambdas = log_grid(s.lo, s.hi, s.per_decade)?;
            let dense = dense_system(setup, &observation.sensors)?;
            let errors = match &dense {
                Some(sys) => relative_errors(sys, &observation.values, &setup.f_star, &lambdas)?,
                None => lambdas
                    .iter()
                    .map(|&l| {
                        let r = solve_at(cfg, setup, observation, l, None)?;
                        Ok(l2_norm(&r.field.sub(&setup.f_star)?) / l2_norm(&setup.f_star))
                    })
                    .collect::<Result<_>>()?,
            };
            let sweep = SweepResult::from_curve(lambdas, errors)?;
            let result = solve_at(cfg, setup, observation, sweep.best_lambda, dense.as_ref())?;
            Ok((result, None, Some(sweep)))
        }
    }
}

fn solve_at(
    cfg: &ExperimentConfig,
    setup: &Setup,
    observation: &Observation,
    lambda: f64,
    dense: Option<&DenseNormalSystem>,
) -> Result<InversionResult> {
    match dense {
        Some(sys) => sys.invert(observation, lambda),
        None => {
            let p = TikhonovProblem::new(&setup.forward, observation, lambda)?;
            minimize(&p, cfg.solver.method, cfg.solver.tol, cfg.solver.max_iter())
        }
    }
}

fn dense_system(setup: &Setup, sensors: &SensorSet) -> Result<Option<DenseNormalSystem>> {
    if setup.grid.interior_count() > DENSE_SYSTEM_LIMIT {
        return Ok(None);
    }
    DenseNormalSystem::new(&setup.forward, sensors).map(Some)
}

pub fn run_experiment(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<ExperimentOutput> {
    let setup = Setup::new(cfg)?;
    let mut out = match kind {
        ExperimentKind::Mc => run_mc(cfg, &setup)?,
        ExperimentKind::SweepSigma | ExperimentKind::SweepN | ExperimentKind::SweepFnorm => run_sweep(cfg, &setup, kind)?,
        ExperimentKind::InteriorDecay => run_decay(cfg, &setup)?,
        ExperimentKind::SpectralCheck => run_spectral(cfg, &setup)?,
    };
    out.apply_brackets(&cfg.experiment.brackets);
    Ok(out)
}

fn run_mc(cfg: &ExperimentConfig, setup: &Setup) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(ExperimentKind::Mc);
    let lambda = match cfg.lambda.value {
        Some(l) => l,
        None => {
            let obs = setup.observation(cfg)?;
            let (trace, _) = adapt_lambda(&obs, &setup.forward, &cfg.adapt_options())?;
            trace.final_lambda()
        }
    };
    let problem = McProblem {
        cfg: &setup.forward,
        f_star: &setup.f_star,
        sensors: &setup.sensors,
        noise: setup.noise,
        lambda,
        method: cfg.solver.method,
    };
    let summary = mc_errors(&problem, cfg.experiment.replications)?;
    let mut errors = Table::new("errors.csv", &["replication", "error_n", "error_l2"]);
    for (r, (e, e2)) in summary.errors.iter().zip(&summary.errors_l2).enumerate() {
        errors.push(vec![r as f64, *e, *e2]);
    }
    let points = qq_points(&summary.errors)?;
    let mut qq = Table::new("qq.csv", &["normal_quantile", "standardized_error"]);
    for (x, y) in &points {
        qq.push(vec![*x, *y]);
    }
    let (m1, m2) = summary.half_means();
    let half = (summary.replications / 2) as f64;
    out.metrics.insert("lambda".into(), lambda);
    out.metrics.insert("replications".into(), summary.replications as f64);
    out.metrics.insert("mean".into(), summary.mean);
    out.metrics.insert("std".into(), summary.std);
    out.metrics.insert("qq_correlation".into(), qq_correlation(&points));
    out.metrics.insert("half_mean_gap".into(), (m1 - m2).abs() / (3.0 * summary.std / half.sqrt()));
    out.tables = vec![errors, qq];
    Ok(out)
}

/// Mean relative L2 error over `reps` noise draws for every lambda.
fn mean_error_curve(
    setup: &Setup,
    sys: &DenseNormalSystem,
    f_star: &Field,
    noise: &NoiseModel,
    lambdas: &[f64],
    reps: usize,
) -> Result<Vec<f64>> {
    let clean = clean_data(&setup.forward, f_star, sys.sensors())?;
    let curves: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let obs = Observation::from_clean(sys.sensors(), &clean, noise, r as u64, "sweep")?;
            relative_errors(sys, &obs.values, f_star, lambdas)
        })
        .collect::<Result<_>>()?;
    Ok((0..lambdas.len()).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / reps as f64).collect())
}

fn run_sweep(cfg: &ExperimentConfig, setup: &Setup, kind: ExperimentKind) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(kind);
    let e = &cfg.experiment;
    let s = &cfg.lambda.sweep;
    let lambdas = log_grid(s.lo, s.hi, s.per_decade)?;
    if setup.grid.interior_count() > DENSE_SYSTEM_LIMIT {
        return Err(Error::SizeCap { size: setup.grid.interior_count(), cap: DENSE_SYSTEM_LIMIT });
    }
    let (label, xs): (&str, Vec<f64>) = match kind {
        ExperimentKind::SweepSigma => ("sigma", e.sigmas.clone()),
        ExperimentKind::SweepN => ("n", e.per_axis_values.iter().map(|&p| (p as f64).powi(setup.grid.dim() as i32)).collect()),
        _ => ("f_norm", e.amplitudes.iter().map(|a| a * l2_norm(&setup.f_star)).collect()),
    };
    let mut curve = Table::new("sweep_curves.csv", &[label, "lambda", "mean_relative_error"]);
    let mut best = Table::new("sweep.csv", &[label, "lambda_star", "error_at_lambda_star"]);
    let shared = match kind {
        ExperimentKind::SweepN => None,
        _ => Some(DenseNormalSystem::new(&setup.forward, &setup.sensors)?),
    };
    let mut stars = Vec::with_capacity(xs.len());
    for (i, &x) in xs.iter().enumerate() {
        let (sys, f_star, noise) = match kind {
            ExperimentKind::SweepSigma => (
                shared.clone().expect("shared system"),
                setup.f_star.clone(),
                NoiseModel::new(setup.noise.kind, e.sigmas[i], cfg.seed)?,
            ),
            ExperimentKind::SweepFnorm => (
                shared.clone().expect("shared system"),
                setup.f_star.scaled(e.amplitudes[i])?,
                setup.noise,
            ),
            _ => {
                let sensors = cfg.sensors_with(&setup.grid, e.per_axis_values[i])?;
                (DenseNormalSystem::new(&setup.forward, &sensors)?, setup.f_star.clone(), setup.noise)
            }
        };
        let errors = mean_error_curve(setup, &sys, &f_star, &noise, &lambdas, e.sweep_replications)?;
        for (l, err) in lambdas.iter().zip(&errors) {
            curve.push(vec![x, *l, *err]);
        }
        let sweep = SweepResult::from_curve(lambdas.clone(), errors)?;
        best.push(vec![x, sweep.best_lambda, sweep.best_error]);
        stars.push(sweep.best_lambda);
    }
    let fit = fit_slope(&xs, &stars, true)?;
    out.metrics.insert("slope".into(), fit.slope);
    out.metrics.insert("intercept".into(), fit.intercept);
    out.metrics.insert("correlation".into(), fit.correlation);
    out.metrics.insert("points".into(), fit.points as f64);
    out.tables = vec![best, curve];
    Ok(out)
}

/// Times on the step grid from `fraction * T` to `T`.
pub fn decay_times(final_time: f64, dt: f64, fraction: f64, points: usize) -> Vec<f64> {
    let first = (fraction * final_time / dt).ceil() as usize;
    let last = (final_time / dt).round() as usize;
    let points = points.max(2).min(last - first + 1);
    let mut steps: Vec<usize> = (0..points)
        .map(|i| first + ((last - first) as f64 * i as f64 / (points - 1) as f64).round() as usize)
        .collect();
    steps.dedup();
    steps.iter().map(|&s| s as f64 * dt).collect()
}

fn run_decay(cfg: &ExperimentConfig, setup: &Setup) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(ExperimentKind::InteriorDecay);
    let obs = setup.observation(cfg)?;
    let (result, trace, _) = invert_configured(cfg, setup, &obs, cfg.lambda.mode)?;
    let e = &cfg.experiment;
    let times = decay_times(cfg.final_time, setup.forward.dt(), e.decay_t_min_fraction, e.decay_points);
    let fit = interior_decay(&result.field, &setup.f_star, &setup.forward, result.lambda, &times)?;
    // Full-range errors, for the backward-growth trend.
    let diff = result.field.sub(&setup.f_star)?;
    let e0 = l2_norm(&diff);
    let e_final = l2_norm(&setup.forward.forward_solve(&diff, cfg.final_time)?);
    let mut table = Table::new("decay.csv", &["t", "error_l2"]);
    for (t, err) in fit.times.iter().zip(&fit.errors) {
        table.push(vec![*t, *err]);
    }
    out.metrics.insert("lambda".into(), result.lambda);
    out.metrics.insert("fitted_slope".into(), fit.fit.slope);
    out.metrics.insert("predicted_slope".into(), fit.predicted_slope);
    out.metrics.insert("relative_deviation".into(), fit.relative_deviation());
    out.metrics.insert("fit_correlation".into(), fit.fit.correlation);
    out.metrics.insert("error_t0".into(), e0);
    out.metrics.insert("error_final".into(), e_final);
    out.metrics.insert("relative_error".into(), e0 / l2_norm(&setup.f_star));
    out.metrics.insert("backward_growth".into(), if e_final <= e0 { 1.0 } else { 0.0 });
    if let Some(tr) = &trace {
        out.metrics.insert("steps".into(), tr.steps() as f64);
        out.metrics.insert("converged".into(), if tr.converged { 1.0 } else { 0.0 });
        out.metrics.insert("h_est".into(), tr.h_est);
    }
    out.tables = vec![table];
    out.field = Some(result.field);
    out.trace = trace;
    Ok(out)
}

fn run_spectral(cfg: &ExperimentConfig, setup: &Setup) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(ExperimentKind::SpectralCheck);
    let e = &cfg.experiment;
    let op = setup.forward.operator();
    let spectrum = partial_spectrum(op, e.modes)?;
    let analytic = analytic_spectrum(&setup.grid, op.coefficients(), cfg.final_time, e.modes)?;
    let t_final = cfg.final_time;
    let times: Vec<f64> = (0..e.spectral_t_points)
        .map(|i| t_final * i as f64 / (e.spectral_t_points.max(2) - 1) as f64)
        .collect();
    let decades = (e.spectral_lambda_hi / e.spectral_lambda_lo).log10();
    let lambdas: Vec<f64> = (0..e.spectral_lambda_points)
        .map(|i| e.spectral_lambda_lo * 10f64.powf(decades * i as f64 / (e.spectral_lambda_points.max(2) - 1) as f64))
        .collect();
    let rows = spectral_bounds(&spectrum.eigenvalues, t_final, &times, &lambdas);
    let mut bounds = Table::new("bounds.csv", &["t", "lambda", "kt_sup", "kt_bound", "st_sup", "st_bound", "holds"]);
    for r in &rows {
        bounds.push(vec![r.t, r.lambda, r.kt_sup, r.kt_bound, r.st_sup, r.st_bound, if r.holds() { 1.0 } else { 0.0 }]);
    }
    let dim = setup.grid.dim();
    let computed = growth_ratios(&spectrum.eigenvalues, dim);
    let exact_mu: Vec<f64> = analytic.iter().map(|m| m.mu).collect();
    let (c1, c2) = bracket(&growth_ratios(&exact_mu, dim));
    let outside = computed.iter().filter(|&&r| r < 0.9 * c1 || r > 1.1 * c2).count();
    let mut spec = Table::new("spectrum.csv", &["k", "mu_k", "exp(-mu_k*T)"]);
    let mut growth = Table::new("growth.csv", &["k", "mu_k", "analytic_mu_k", "ratio", "analytic_ratio"]);
    for (k, mu) in spectrum.eigenvalues.iter().enumerate() {
        spec.push(vec![(k + 1) as f64, *mu, (-mu * t_final).exp()]);
        let exact = exact_mu[k];
        let kk = ((k + 1) as f64).powf(2.0 / dim as f64);
        growth.push(vec![(k + 1) as f64, *mu, exact, mu / kk, exact / kk]);
    }
    let (lo, hi) = bracket(&computed);
    out.metrics.insert("modes".into(), spectrum.len() as f64);
    out.metrics.insert("bound_violations".into(), rows.iter().filter(|r| !r.holds()).count() as f64);
    out.metrics.insert("growth_ratio_min".into(), lo);
    out.metrics.insert("growth_ratio_max".into(), hi);
    out.metrics.insert("analytic_ratio_min".into(), c1);
    out.metrics.insert("analytic_ratio_max".into(), c2);
    out.metrics.insert("growth_outside_bracket".into(), outside as f64);
    out.tables = vec![spec, bounds, growth];
    Ok(out)
}
