//! Self-adaptive choice of the regularization parameter and the data-driven
//! H2 norm estimate it relies on.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardConfig;
use crate::grid::{fmt_num, h2_norm_discrete, Field};
use crate::observe::Observation;
use crate::tikhonov::{minimize, InversionResult, Method, TikhonovProblem, DEFAULT_TOL};

/// Lower bound applied to every lambda iterate.
pub const LAMBDA_MIN: f64 = 1e-14;

const GCV_POINTS: usize = 241;

/// Estimate of `||u*||_{H2}` from sensor data on a full lattice.
///
/// The data are extended by zero to the domain boundary and smoothed by
/// `min ||u - m||^2 + alpha |u|_{H2}^2` on the lattice, which the discrete
/// sine transform diagonalizes; `alpha` minimizes generalized
/// cross-validation over a log grid. Returns the discrete H2 norm of the
/// smoothed field, or 0 for all-zero data.
pub fn estimate_h2(observation: &Observation) -> Result<f64> {
    let sensors = &observation.sensors;
    let lattice = sensors
        .lattice()
        .ok_or_else(|| Error::Sensor("H2 estimate needs sensors on a full lattice".into()))?;
    let grid = lattice.grid(sensors.grid())?;
    let m = &observation.values;
    if m.len() != grid.interior_count() {
        return Err(Error::LengthMismatch { expected: grid.interior_count(), got: m.len() });
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let p = &lattice.per_axis;
    let kappa: Vec<Vec<f64>> = grid
        .axes()
        .iter()
        .zip(p)
        .map(|(a, &p)| {
            let s = a.spacing();
            (1..=p).map(|k| 4.0 / (s * s) * (k as f64 * PI / (2.0 * (p + 1) as f64)).sin().powi(2)).collect()
        })
        .collect();
    let penalty: Vec<f64> = match grid.dim() {
        1 => kappa[0].iter().map(|k| k * k).collect(),
        _ => kappa[0].iter().flat_map(|kx| kappa[1].iter().map(move |ky| (kx + ky).powi(2))).collect(),
    };
    let coeffs = dst(m, p);
    let n = m.len() as f64;
    let (p_min, p_max) = penalty.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = ((1e-4 / p_max).log10(), (1e4 / p_min).log10());
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..GCV_POINTS {
        let alpha = 10f64.powf(lo + (hi - lo) * i as f64 / (GCV_POINTS - 1) as f64);
        let mut rss = 0.0;
        let mut trace = 0.0;
        for (c, pk) in coeffs.iter().zip(&penalty) {
            let shrink = alpha * pk / (1.0 + alpha * pk);
            rss += (shrink * c).powi(2);
            trace += shrink;
        }
        let gcv = n * rss / (trace * trace);
        if gcv < best.0 {
            best = (gcv, alpha);
        }
    }
    let alpha = best.1;
    let smoothed: Vec<f64> = coeffs.iter().zip(&penalty).map(|(c, pk)| c / (1.0 + alpha * pk)).collect();
    let u = dst(&smoothed, p);
    Ok(h2_norm_discrete(&Field::from_interior(&grid, &u)?))
}

/// Orthonormal type-I sine transform along every axis; its own inverse.
fn dst(values: &[f64], per_axis: &[usize]) -> Vec<f64> {
    let basis = |p: usize| {
        let c = (2.0 / (p + 1) as f64).sqrt();
        DMatrix::from_fn(p, p, |j, k| c * ((j + 1) as f64 * (k + 1) as f64 * PI / (p + 1) as f64).sin())
    };
    match per_axis.len() {
        1 => {
            let s = basis(per_axis[0]);
            (s * nalgebra::DVector::from_column_slice(values)).as_slice().to_vec()
        }
        _ => {
            let (px, py) = (per_axis[0], per_axis[1]);
            // Row i holds the values at x-index i.
            let u = DMatrix::from_row_slice(px, py, values);
            let out = basis(px) * u * basis(py);
            let mut flat = Vec::with_capacity(px * py);
            for i in 0..px {
                flat.extend(out.row(i).iter());
            }
            flat
        }
    }
}

/// One fixed-point update
/// `lambda = (H^{d/4} n^{-1/2} misfit / ||f||^{1+d/4})^{1/(1/2+d/8)}`.
///
/// Errors with [`Error::Degenerate`] when `||f|| = 0`.
pub fn lambda_step(f_norm: f64, misfit: f64, h_est: f64, n: usize, d: usize) -> Result<f64> {
    if !(f_norm > 0.0) {
        return Err(Error::Degenerate("current solution is zero".into()));
    }
    if !(misfit >= 0.0 && misfit.is_finite() && h_est >= 0.0 && h_est.is_finite()) {
        return Err(Error::InvalidArgument(format!("need finite misfit >= 0 and H >= 0, got {misfit}, {h_est}")));
    }
    if n == 0 || !(1..=2).contains(&d) {
        return Err(Error::InvalidArgument(format!("need n > 0 and d in 1..=2, got n={n}, d={d}")));
    }
    let d = d as f64;
    let bracket = h_est.powf(d / 4.0) * (n as f64).powf(-0.5) * misfit / f_norm.powf(1.0 + d / 4.0);
    Ok(bracket.powf(1.0 / (0.5 + d / 8.0)))
}

/// Default starting value `n^{-4/(d+4)}`.
pub fn initial_lambda(n: usize, d: usize) -> f64 {
    (n as f64).powf(-4.0 / (d as f64 + 4.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLambda {
    /// `n^{-4/(d+4)}`.
    #[default]
    Rule,
    One,
    Value(f64),
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub initial: InitialLambda,
    pub method: Method,
    pub inner_tol: f64,
    /// Replaces the data-driven H2 estimate when set.
    pub h2_override: Option<f64>,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_outer: 25,
            initial: InitialLambda::Rule,
            method: Method::CgNormal,
            inner_tol: DEFAULT_TOL,
            h2_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub j: usize,
    pub lambda: f64,
    pub misfit: f64,
    pub f_norm: f64,
    #[serde(rename = "J")]
    pub objective: f64,
    /// Misfit larger than at the previous step.
    pub misfit_increased: bool,
    /// Lambda was raised to [`LAMBDA_MIN`].
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaTrace {
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
    pub h_est: f64,
}

impl LambdaTrace {
    pub fn final_lambda(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.lambda)
    }

    /// Number of updates after the initial solve.
    pub fn steps(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }

    pub fn misfit_monotone(&self) -> bool {
        self.entries.iter().all(|e| !e.misfit_increased)
    }

    /// Writes `j,lambda,misfit,f_norm,J` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "j,lambda,misfit,f_norm,J")?;
        for e in &self.entries {
            let nums = [e.lambda, e.misfit, e.f_norm, e.objective].map(fmt_num);
            writeln!(w, "{},{}", e.j, nums.join(","))?;
        }
        Ok(())
    }
}

/// Alternates minimization and [`lambda_step`] until
/// `|lambda_j - lambda_{j-1}| <= tol * lambda_j` or `max_outer`
/// updates. Non-convergence is reported through the trace flag.
pub fn adapt_lambda(
    observation: &Observation,
    cfg: &ForwardConfig,
    options: &AdaptOptions,
) -> Result<(LambdaTrace, InversionResult)> {
    let dense = match options.method {
        Method::DenseEigen => Some(crate::tikhonov::DenseNormalSystem::new(cfg, &observation.sensors)?),
        _ => None,
    };
    adapt_lambda_with(observation, cfg.grid().dim(), options, |lambda| match &dense {
        Some(sys) => sys.invert(observation, lambda),
        None => {
            let p = TikhonovProblem::new(cfg, observation, lambda)?;
            minimize(&p, options.method, options.inner_tol, options.method.default_max_iter())
        }
    })
}

/// [`adapt_lambda`] with a caller-supplied inner solver.
pub fn adapt_lambda_with(
    observation: &Observation,
    dim: usize,
    options: &AdaptOptions,
    solve: impl Fn(f64) -> Result<InversionResult>,
) -> Result<(LambdaTrace, InversionResult)> {
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", options.tol)));
    }
    let n = observation.len();
    let h_est = match options.h2_override {
        Some(h) => h,
        None => estimate_h2(observation)?,
    };
    let lambda0 = match options.initial {
        InitialLambda::Rule => initial_lambda(n, dim),
        InitialLambda::One => 1.0,
        InitialLambda::Value(v) if v > 0.0 => v,
        InitialLambda::Value(v) => {
            return Err(Error::InvalidArgument(format!("initial lambda must be positive, got {v}")));
        }
    };
    let mut entries = Vec::new();
    let record = |entries: &mut Vec<TraceEntry>, r: &InversionResult, floored: bool| {
        let f_norm = crate::grid::l2_norm(&r.field);
        let misfit_increased = entries.last().is_some_and(|e: &TraceEntry| r.misfit > e.misfit * (1.0 + 1e-12));
        entries.push(TraceEntry {
            j: entries.len(),
            lambda: r.lambda,
            misfit: r.misfit,
            f_norm,
            objective: r.objective,
            misfit_increased,
            floored,
        });
        f_norm
    };
    let mut result = solve(lambda0)?;
    let mut f_norm = record(&mut entries, &result, false);
    let mut converged = false;
    for _ in 0..options.max_outer {
        let previous = result.lambda;
        let (mut lambda, mut floored) = match lambda_step(f_norm, result.misfit, h_est, n, dim) {
            Ok(l) => (l, false),
            Err(Error::Degenerate(_)) if previous != lambda0 => {
                log::warn!("zero solution at lambda {previous}; restarting from {lambda0}");
                (lambda0, false)
            }
            Err(e) => return Err(e),
        };
        if !(lambda >= LAMBDA_MIN) {
            log::warn!("lambda update {lambda} floored at {LAMBDA_MIN}");
            lambda = LAMBDA_MIN;
            floored = true;
        }
        result = solve(lambda)?;
        f_norm = record(&mut entries, &result, floored);
        if (lambda - previous).abs() <= options.tol * lambda {
            converged = true;
            break;
        }
    }
    Ok((LambdaTrace { entries, converged, h_est }, result))
}
