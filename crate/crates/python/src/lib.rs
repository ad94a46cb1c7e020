//! Python bindings. Every entry point takes a JSON config string in the
//! same format as the `bhcp` command line and returns plain Python objects.

use bhcp::config::{ExperimentConfig, LambdaMode, Setup};
use bhcp::experiments::{invert_configured, run_experiment, ExperimentKind};
use bhcp::grid::l2_norm;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde_json::{json, Value};

fn to_py(e: bhcp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_config(config: &str) -> PyResult<ExperimentConfig> {
    let cfg = ExperimentConfig::from_json(config).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(name.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{name}'")))
}

fn to_object(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (value.to_string(),))?.unbind())
}

fn field_json(f: &bhcp::grid::Field) -> Value {
    let g = f.grid();
    let points: Vec<[f64; 2]> = (0..g.node_count()).map(|i| g.point(i)).collect();
    json!({ "points": points, "values": f.values() })
}

/// Forward solve of the configured initial condition at `output_times`
/// (default: the final time).
#[pyfunction]
fn forward(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(config)?;
    let out = py.detach(|| -> bhcp::Result<Value> {
        let setup = Setup::new(&cfg)?;
        let times = if cfg.output_times.is_empty() { vec![cfg.final_time] } else { cfg.output_times.clone() };
        let fields = setup.forward.forward_at_times(&setup.f_star, &times)?;
        Ok(json!({ "times": times, "fields": fields.iter().map(field_json).collect::<Vec<_>>() }))
    });
    to_object(py, &out.map_err(to_py)?)
}

/// Noisy sensor data generated from the configured initial condition.
#[pyfunction]
fn observe(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(config)?;
    let out = py.detach(|| -> bhcp::Result<Value> {
        let setup = Setup::new(&cfg)?;
        let obs = setup.observation(&cfg)?;
        Ok(json!({
            "points": obs.sensors.points(),
            "weights": obs.sensors.weights(),
            "values": obs.values,
            "sigma": setup.noise.sigma,
        }))
    });
    to_object(py, &out.map_err(to_py)?)
}

/// Tikhonov inversion with `mode` in {"fixed", "adaptive", "sweep"};
/// defaults to the mode in the config.
#[pyfunction]
#[pyo3(signature = (config, mode=None))]
fn invert(py: Python<'_>, config: &str, mode: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(config)?;
    let mode: LambdaMode = match mode {
        Some(m) => parse_enum("mode", m)?,
        None => cfg.lambda.mode,
    };
    let out = py.detach(|| -> bhcp::Result<Value> {
        let setup = Setup::new(&cfg)?;
        let obs = setup.observation(&cfg)?;
        let (result, trace, sweep) = invert_configured(&cfg, &setup, &obs, mode)?;
        let star = l2_norm(&setup.f_star);
        let relative_error = if star > 0.0 { l2_norm(&result.field.sub(&setup.f_star)?) / star } else { f64::NAN };
        let mut v = json!({
            "lambda": result.lambda,
            "misfit": result.misfit,
            "objective": result.objective,
            "iterations": result.iterations,
            "f_norm": l2_norm(&result.field),
            "relative_error": relative_error,
            "field": field_json(&result.field),
        });
        if let Some(t) = trace {
            v["trace"] = serde_json::to_value(&t).map_err(|e| bhcp::Error::Config(e.to_string()))?;
        }
        if let Some(s) = sweep {
            v["sweep"] = json!({ "lambdas": s.lambdas, "errors": s.errors, "best_lambda": s.best_lambda });
        }
        Ok(v)
    });
    to_object(py, &out.map_err(to_py)?)
}

/// One update of the self-adaptive regularization parameter.
#[pyfunction]
fn lambda_step(f_norm: f64, misfit: f64, h_est: f64, n: usize, d: usize) -> PyResult<f64> {
    bhcp::adapt::lambda_step(f_norm, misfit, h_est, n, d).map_err(to_py)
}

/// Runs a named experiment and returns its metrics and bracket checks.
#[pyfunction]
fn experiment(py: Python<'_>, config: &str, kind: &str) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(config)?;
    let kind: ExperimentKind = parse_enum("experiment", kind)?;
    let out = py.detach(|| -> bhcp::Result<Value> {
        let r = run_experiment(&cfg, kind)?;
        let tables: serde_json::Map<String, Value> =
            r.tables.iter().map(|t| (t.name.clone(), Value::String(t.to_csv()))).collect();
        Ok(json!({ "metrics": r.metrics, "checks": r.checks, "pass": r.all_pass(), "tables": tables }))
    });
    to_object(py, &out.map_err(to_py)?)
}

#[pymodule]
fn bhcp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(observe, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_step, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}
