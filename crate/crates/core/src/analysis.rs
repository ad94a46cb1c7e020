//! Statistics for the empirical checks: slope fits, Monte Carlo error
//! samples, Q-Q data, lambda sweeps, interior-time decay and spectral bounds.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::forward::ForwardConfig;
use crate::grid::{l2_norm, Field};
use crate::observe::{clean_data, empirical_norm, NoiseModel, Observation, SensorSet};
use crate::tikhonov::{minimize, DenseNormalSystem, InversionResult, Method, TikhonovProblem, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub correlation: f64,
    pub points: usize,
}

/// Least-squares line through `(x, y)`, or through `(log10 x, log10 y)`
/// when `log_log` is set.
pub fn fit_slope(xs: &[f64], ys: &[f64], log_log: bool) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {}", xs.len())));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = if log_log {
        if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
        }
        (xs.iter().map(|v| v.log10()).collect(), ys.iter().map(|v| v.log10()).collect())
    } else {
        (xs.to_vec(), ys.to_vec())
    };
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit_slope"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    let slope = sxy / sxx;
    let correlation = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    Ok(SlopeFit { slope, intercept: my - slope * mx, correlation, points: x.len() })
}

/// Standardized sample quantiles against standard normal quantiles at
/// plotting positions `(i - 0.5) / N`.
pub fn qq_points(sample: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = sample.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("Q-Q plot needs at least 10 samples, got {n}")));
    }
    let (mean, std) = mean_std(sample);
    if !(std > 0.0) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (normal.inverse_cdf((i as f64 + 0.5) / n as f64), (v - mean) / std))
        .collect())
}

/// Pearson correlation of the Q-Q points.
pub fn qq_correlation(points: &[(f64, f64)]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    pearson(&xs, &ys)
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Sample mean and standard deviation (divisor `N - 1`).
pub fn mean_std(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    if sample.len() < 2 {
        return (mean, 0.0);
    }
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A fixed-lambda inversion repeated over independent noise draws.
#[derive(Debug, Clone)]
pub struct McProblem<'a> {
    pub cfg: &'a ForwardConfig,
    pub f_star: &'a Field,
    pub sensors: &'a SensorSet,
    pub noise: NoiseModel,
    pub lambda: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub replications: usize,
    /// `||F_T f_n - F_T f*||_n` per replication.
    pub errors: Vec<f64>,
    /// `||F_T f_n - F_T f*||_{L2}` per replication.
    pub errors_l2: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// The empirical errors in increasing order.
    pub quantiles: Vec<f64>,
}

impl McSummary {
    /// Means of the first and second halves of the replications.
    pub fn half_means(&self) -> (f64, f64) {
        let h = self.errors.len() / 2;
        (mean_std(&self.errors[..h]).0, mean_std(&self.errors[h..]).0)
    }
}

/// Replication `r` uses noise stream `r`; results do not depend on the
/// number of worker threads.
pub fn mc_errors(p: &McProblem, replications: usize) -> Result<McSummary> {
    if replications == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    let clean = clean_data(p.cfg, p.f_star, p.sensors)?;
    let truth_t = p.cfg.forward_interior(&p.f_star.interior_values());
    let dense = match p.method {
        Method::DenseEigen => Some(DenseNormalSystem::new(p.cfg, p.sensors)?),
        _ => None,
    };
    let pairs: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let obs = Observation::from_clean(p.sensors, &clean, &p.noise, r as u64, "mc")?;
            let f = invert(p.cfg, &obs, p.lambda, p.method, dense.as_ref())?.field.interior_values();
            let diff: Vec<f64> = p.cfg.forward_interior(&f).iter().zip(&truth_t).map(|(a, b)| a - b).collect();
            let at_sensors = p.sensors.sample_interior(&diff);
            let e_n = empirical_norm(p.sensors, &at_sensors)?;
            let e_l2 = l2_norm(&Field::from_interior(p.cfg.grid(), &diff)?);
            Ok((e_n, e_l2))
        })
        .collect::<Result<_>>()?;
    let (errors, errors_l2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (mean, std) = mean_std(&errors);
    let mut quantiles = errors.clone();
    quantiles.sort_by(f64::total_cmp);
    Ok(McSummary { replications, errors, errors_l2, mean, std, quantiles })
}

/// Minimizer of `J` with `method`, reusing a prebuilt dense system when given.
pub fn invert(
    cfg: &ForwardConfig,
    observation: &Observation,
    lambda: f64,
    method: Method,
    dense: Option<&DenseNormalSystem>,
) -> Result<InversionResult> {
    match dense {
        Some(sys) => sys.invert(observation, lambda),
        None => {
            let p = TikhonovProblem::new(cfg, observation, lambda)?;
            minimize(&p, method, DEFAULT_TOL, method.default_max_iter())
        }
    }
}

/// `per_decade` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && per_decade > 0) {
        return Err(Error::InvalidArgument(format!("bad log grid [{lo}, {hi}] with {per_decade} per decade")));
    }
    let decades = (hi / lo).log10();
    let count = (decades * per_decade as f64).round() as usize;
    if count == 0 {
        return Ok(vec![lo]);
    }
    Ok((0..=count).map(|i| lo * 10f64.powf(decades * i as f64 / count as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub lambdas: Vec<f64>,
    pub errors: Vec<f64>,
    pub best_lambda: f64,
    pub best_error: f64,
}

impl SweepResult {
    /// Argmin of a precomputed error curve; the first minimum wins ties.
    pub fn from_curve(lambdas: Vec<f64>, errors: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != errors.len() {
            return Err(Error::InvalidArgument("lambda grid and error curve must be non-empty and equal length".into()));
        }
        let (best, _) = errors
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, be), (i, &e)| if e < be { (i, e) } else { (bi, be) });
        Ok(SweepResult { best_lambda: lambdas[best], best_error: errors[best], lambdas, errors })
    }

    /// Whether the minimum lies strictly inside the grid.
    pub fn interior_minimum(&self) -> bool {
        let i = self.lambdas.iter().position(|&l| l == self.best_lambda).unwrap_or(0);
        i > 0 && i + 1 < self.lambdas.len()
    }
}

/// Evaluates `error(lambda)` on the grid in parallel and returns the argmin.
pub fn sweep_lambda(lambdas: &[f64], error: impl Fn(f64) -> Result<f64> + Sync) -> Result<SweepResult> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let errors: Vec<f64> = lambdas.par_iter().map(|&l| error(l)).collect::<Result<_>>()?;
    SweepResult::from_curve(lambdas.to_vec(), errors)
}

/// Relative L2 errors `||f_n(lambda) - f*|| / ||f*||` for one data vector
/// over a lambda grid, via one dense eigendecomposition.
pub fn relative_errors(sys: &DenseNormalSystem, m: &[f64], f_star: &Field, lambdas: &[f64]) -> Result<Vec<f64>> {
    let coeffs = sys.coefficients(m)?;
    let truth = f_star.interior_values();
    let norm = l2_norm(f_star);
    if norm == 0.0 {
        return Err(Error::Degenerate("zero ground truth".into()));
    }
    lambdas
        .iter()
        .map(|&l| {
            let f = sys.solve_coefficients(&coeffs, l);
            let diff: Vec<f64> = f.iter().zip(&truth).map(|(a, b)| a - b).collect();
            Ok(l2_norm(&Field::from_interior(sys.grid(), &diff)?) / norm)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub times: Vec<f64>,
    /// `||F_t f_n - F_t f*||_{L2}` per time.
    pub errors: Vec<f64>,
    /// Fit of `log10 error` against `t`.
    pub fit: SlopeFit,
    /// `log10(lambda) / (2 T)`.
    pub predicted_slope: f64,
}

impl DecayFit {
    pub fn relative_deviation(&self) -> f64 {
        (self.fit.slope - self.predicted_slope).abs() / self.predicted_slope.abs()
    }
}

/// Decay of the forward-propagated reconstruction error over `times`.
pub fn interior_decay(
    f_n: &Field,
    f_star: &Field,
    cfg: &ForwardConfig,
    lambda: f64,
    times: &[f64],
) -> Result<DecayFit> {
    let diff = f_n.sub(f_star)?;
    let scale = l2_norm(f_star).max(l2_norm(f_n));
    let errors: Vec<f64> = cfg.forward_at_times(&diff, times)?.iter().map(l2_norm).collect();
    if errors.iter().all(|&e| e <= 1e-12 * scale) {
        return Err(Error::Degenerate("reconstruction equals the truth to round-off".into()));
    }
    let logs: Vec<f64> = errors.iter().map(|e| e.log10()).collect();
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("zero error at some time".into()));
    }
    let fit = fit_slope(times, &logs, false)?;
    Ok(DecayFit {
        times: times.to_vec(),
        errors,
        fit,
        predicted_slope: lambda.log10() / (2.0 * cfg.final_time()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralBoundRow {
    pub t: f64,
    pub lambda: f64,
    /// `sup e^{-2 t mu} / (e^{-2 T mu} + lambda)^2`.
    pub kt_sup: f64,
    /// `lambda^{-(2 - t/T)}`.
    pub kt_bound: f64,
    /// `sup e^{-2 t mu} e^{-2 T mu} / (e^{-2 T mu} + lambda)^2`.
    pub st_sup: f64,
    /// `lambda^{t/T - 1}`.
    pub st_bound: f64,
}

impl SpectralBoundRow {
    pub fn holds(&self) -> bool {
        let slack = 1.0 + 1e-12;
        self.kt_sup <= self.kt_bound * slack && self.st_sup <= self.st_bound * slack
    }
}

/// Evaluates both resolvent bounds over the eigenvalues `mu` for every pair
/// of `times` and `lambdas`.
pub fn spectral_bounds(mu: &[f64], final_time: f64, times: &[f64], lambdas: &[f64]) -> Vec<SpectralBoundRow> {
    let mut rows = Vec::with_capacity(times.len() * lambdas.len());
    for &t in times {
        for &lambda in lambdas {
            let s = t / final_time;
            let (mut kt, mut st) = (0.0f64, 0.0f64);
            for &m in mu {
                let decay_t = (-2.0 * t * m).exp();
                let decay_final = (-2.0 * final_time * m).exp();
                let den = (decay_final + lambda).powi(2);
                kt = kt.max(decay_t / den);
                st = st.max(decay_t * decay_final / den);
            }
            rows.push(SpectralBoundRow {
                t,
                lambda,
                kt_sup: kt,
                kt_bound: lambda.powf(-(2.0 - s)),
                st_sup: st,
                st_bound: lambda.powf(s - 1.0),
            });
        }
    }
    rows
}

/// Ratios `mu_k / k^{2/d}` for `k = 1..`.
pub fn growth_ratios(mu: &[f64], d: usize) -> Vec<f64> {
    mu.iter().enumerate().map(|(i, m)| m / ((i + 1) as f64).powf(2.0 / d as f64)).collect()
}

/// Smallest and largest entry.
pub fn bracket(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = fit_slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], false).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.correlation - 1.0).abs() < 1e-14);
        assert_eq!(f.points, 3);
    }

    #[test]
    fn exact_power_law() {
        let xs: Vec<f64> = (0..5).map(|i| 10f64.powf(-2.0 + i as f64 * 0.5)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.powf(4.0 / 3.0)).collect();
        let f = fit_slope(&xs, &ys, true).unwrap();
        assert!((f.slope - 4.0 / 3.0).abs() <= 1e-10);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_slope(&[1.0, 2.0], &[1.0, 2.0], false).is_err());
        assert!(fit_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0], true).is_err());
        assert!(fit_slope(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], false).is_err());
    }

    #[test]
    fn qq_of_normal_quantiles_is_identity() {
        let n = 200;
        let normal = Normal::standard();
        let sample: Vec<f64> = (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
        let pts = qq_points(&sample).unwrap();
        let (_, std) = mean_std(&sample);
        for (x, y) in &pts {
            assert!((x / std - y).abs() < 1e-12);
        }
        assert!(qq_correlation(&pts) > 0.9999);
        let shifted: Vec<f64> = sample.iter().map(|v| 3.0 * v - 7.0).collect();
        let other = qq_points(&shifted).unwrap();
        for (a, b) in pts.iter().zip(&other) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        let heavy: Vec<f64> = sample.iter().map(|v| v.powi(3)).collect();
        assert!(qq_correlation(&qq_points(&heavy).unwrap()) < 0.99);
        assert!(qq_points(&[1.0; 20]).is_err());
        assert!(qq_points(&sample[..5]).is_err());
    }

    #[test]
    fn log_grid_spacing() {
        let g = log_grid(1e-5, 1e-2, 24).unwrap();
        assert_eq!(g.len(), 73);
        assert!((g[0] - 1e-5).abs() < 1e-20 && (g[72] - 1e-2).abs() < 1e-15);
        assert_eq!(log_grid(1e-3, 1e-3, 24).unwrap(), vec![1e-3]);
    }

    #[test]
    fn single_point_sweep() {
        let s = sweep_lambda(&[0.1], |l| Ok(l * 2.0)).unwrap();
        assert_eq!(s.best_lambda, 0.1);
        assert!(!s.interior_minimum());
        let s = sweep_lambda(&[1.0, 2.0, 3.0], |l| Ok((l - 2.0f64).powi(2))).unwrap();
        assert_eq!(s.best_lambda, 2.0);
        assert!(s.interior_minimum());
    }

    #[test]
    fn spectral_bounds_hold_on_analytic_values() {
        let mu: Vec<f64> = (1..=32).map(|k| k as f64).collect();
        let times: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 / 9.0).collect();
        let lambdas = log_grid(1e-8, 1.0, 1).unwrap();
        assert!(spectral_bounds(&mu, 0.1, &times, &lambdas).iter().all(SpectralBoundRow::holds));
    }
}
