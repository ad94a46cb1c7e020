//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use bhcp::config::{ExperimentConfig, LambdaMode, Setup};
use bhcp::experiments::{invert_configured, run_experiment, Check, ExperimentKind, Manifest, Table};
use bhcp::grid::{l2_norm, Field};
use bhcp::observe::Observation;
use bhcp::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "bhcp", version, about = "Backward heat conduction: Tikhonov inversion and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "BHCP_JOBS")]
    jobs: Option<usize>,
    /// Regularization parameter used in fixed mode
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Overrides the config lambda mode
    #[arg(long, global = true, value_enum)]
    mode: Option<LambdaMode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve forward and write the field at the output times.
    Forward,
    /// Generate noisy sensor data.
    Observe,
    /// Reconstruct the initial condition at the configured lambda mode.
    Invert,
    /// Reconstruct with the self-adaptive lambda iteration.
    AdaptLambda,
    /// Run one of the empirical studies.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
    },
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Forward => "forward".into(),
            Command::Observe => "observe".into(),
            Command::Invert => "invert".into(),
            Command::AdaptLambda => "adapt-lambda".into(),
            Command::Experiment { kind } => format!("experiment {}", kind.name()),
        }
    }
}

/// Files of one run, written only after every computation succeeded.
struct RunOutput {
    files: Vec<(String, Vec<u8>)>,
    summary: Value,
    checks: Vec<Check>,
}

impl RunOutput {
    fn new() -> Self {
        Self { files: Vec::new(), summary: json!({}), checks: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_field(&mut self, name: &str, field: &Field) -> Result<()> {
        let mut buf = Vec::new();
        field.write_csv(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn add_table(&mut self, table: &Table) {
        self.add(&table.name, table.to_csv().into_bytes());
    }

    fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if value.get("config_sha256").is_some() {
        let manifest: Manifest = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: invalid manifest: {e}", path.display())))?;
        return Ok(manifest.config);
    }
    ExperimentConfig::from_json(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn apply_overrides(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(lambda) = cli.lambda {
        cfg.lambda.value = Some(lambda);
    }
    if let Some(mode) = cli.mode {
        cfg.lambda.mode = mode;
    }
}

/// Brackets from the config that name a key of `metrics`.
fn configured_checks(cfg: &ExperimentConfig, metrics: &Value) -> Vec<Check> {
    cfg.experiment
        .brackets
        .iter()
        .map(|(metric, &[lo, hi])| {
            let value = metrics.get(metric).and_then(Value::as_f64).unwrap_or(f64::NAN);
            Check { metric: metric.clone(), value, lo, hi, pass: value >= lo && value <= hi }
        })
        .collect()
}

fn cmd_forward(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let setup = Setup::new(cfg)?;
    let times = if cfg.output_times.is_empty() { vec![cfg.final_time] } else { cfg.output_times.clone() };
    let fields = setup.forward.forward_at_times(&setup.f_star, &times)?;
    let mut out = RunOutput::new();
    for (i, f) in fields.iter().enumerate() {
        if times.len() > 1 {
            out.add_field(&format!("field_{i}.csv"), f)?;
        }
    }
    out.add_field("field.csv", fields.last().expect("at least one time"))?;
    let norms: Vec<f64> = fields.iter().map(l2_norm).collect();
    let maxima: Vec<f64> = fields.iter().map(Field::max_abs).collect();
    out.summary = json!({ "times": times, "l2_norm": norms, "max_abs": maxima });
    Ok(out)
}

fn cmd_observe(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let setup = Setup::new(cfg)?;
    let obs = bhcp::observe::observe_named(
        &setup.forward,
        &setup.f_star,
        &setup.sensors,
        &setup.noise,
        cfg.initial_condition.name(),
    )?;
    let mut out = RunOutput::new();
    let (mut csv, mut meta) = (Vec::new(), Vec::new());
    obs.write_csv(&mut csv)?;
    obs.write_metadata(&mut meta)?;
    out.add("observation.csv", csv);
    out.add("observation.json", meta);
    out.summary = json!({ "sensors": obs.len(), "sigma": setup.noise.sigma, "empirical_norm": bhcp::observe::empirical_norm(&obs.sensors, &obs.values)? });
    Ok(out)
}

fn cmd_invert(cfg: &ExperimentConfig, mode: LambdaMode) -> Result<RunOutput> {
    let setup = Setup::new(cfg)?;
    let obs: Observation = setup.observation(cfg)?;
    let (result, trace, sweep) = invert_configured(cfg, &setup, &obs, mode)?;
    let mut out = RunOutput::new();
    out.add_field("field.csv", &result.field)?;
    let mut trace_csv = Vec::new();
    match &trace {
        Some(t) => t.write_csv(&mut trace_csv)?,
        None => {
            let mut t = Table::new("trace.csv", &["j", "lambda", "misfit", "f_norm", "J"]);
            t.push(vec![0.0, result.lambda, result.misfit, l2_norm(&result.field), result.objective]);
            trace_csv = t.to_csv().into_bytes();
        }
    }
    out.add("trace.csv", trace_csv);
    if let Some(s) = &sweep {
        let mut t = Table::new("sweep.csv", &["lambda", "relative_error"]);
        for (l, e) in s.lambdas.iter().zip(&s.errors) {
            t.push(vec![*l, *e]);
        }
        out.add_table(&t);
    }
    let mut meta = Vec::new();
    result.write_metadata(&mut meta)?;
    out.add("metadata.json", meta);
    let star_norm = l2_norm(&setup.f_star);
    let relative_error = if star_norm > 0.0 { l2_norm(&result.field.sub(&setup.f_star)?) / star_norm } else { f64::NAN };
    let mut summary = json!({
        "lambda": result.lambda,
        "misfit": result.misfit,
        "objective": result.objective,
        "iterations": result.iterations,
        "solver_converged": result.converged,
        "f_norm": l2_norm(&result.field),
        "relative_error": relative_error,
    });
    if let Some(t) = &trace {
        summary["steps"] = json!(t.steps());
        summary["converged"] = json!(t.converged);
        summary["misfit_monotone"] = json!(t.misfit_monotone());
        summary["h_est"] = json!(t.h_est);
    }
    out.checks = configured_checks(cfg, &summary);
    out.summary = summary;
    Ok(out)
}

fn cmd_experiment(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<RunOutput> {
    let result = run_experiment(cfg, kind)?;
    let mut out = RunOutput::new();
    for t in &result.tables {
        out.add_table(t);
    }
    if let Some(f) = &result.field {
        out.add_field("field.csv", f)?;
    }
    if let Some(t) = &result.trace {
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        out.add("trace.csv", buf);
    }
    out.summary = json!({ "kind": kind.name(), "metrics": result.metrics });
    out.checks = result.checks;
    Ok(out)
}

fn write_run(dir: &Path, manifest: &Manifest, mut out: RunOutput) -> Result<bool> {
    let pass = out.pass();
    out.summary["checks"] = serde_json::to_value(&out.checks)?;
    out.summary["pass"] = json!(pass);
    fs::create_dir_all(dir)?;
    for (name, bytes) in &out.files {
        fs::write(dir.join(name), bytes)?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)?)?;
    Ok(pass)
}

fn run(cli: &Cli) -> Result<bool> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    apply_overrides(&mut cfg, cli);
    cfg.validate()?;
    let dir = cfg.out.clone().ok_or_else(|| Error::Config("no output directory: pass --out or set \"out\"".into()))?;
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let out = pool.install(|| match &cli.command {
        Command::Forward => cmd_forward(&cfg),
        Command::Observe => cmd_observe(&cfg),
        Command::Invert => cmd_invert(&cfg, cfg.lambda.mode),
        Command::AdaptLambda => cmd_invert(&cfg, LambdaMode::Adaptive),
        Command::Experiment { kind } => cmd_experiment(&cfg, *kind),
    })?;
    let manifest = Manifest::new(&cli.command.name(), &cfg)?;
    write_run(&dir, &manifest, out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more acceptance brackets failed; see summary.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
