mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "monofollow", version, about = "Spectral-truncation laboratory for monotone-follower control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate uncontrolled mode paths and their truncated cost.
    Simulate,
    /// Solve the stopping problem by finite differences or regression.
    SolveStopping,
    /// Sweep reflection thresholds and value the best one.
    SolveControl,
    /// Directional derivative of the control value against U - 1 - Phi.
    Derivative,
    /// Run a verification suite.
    Verify,
    /// Refinement study of one check.
    Refine,
    /// Dump a preset's model, cost and parameters.
    App,
}

#[derive(Debug, Args)]
struct Flags {
    /// Config file with flat dotted keys
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set app.discount=0.5
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Application preset (energy or climate); app.* keys override its parameters
    #[arg(long, global = true)]
    app: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    model: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    cost: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    paths: Option<usize>,
    #[arg(long, global = true, value_name = "T")]
    horizon: Option<f64>,
    #[arg(long, global = true, value_name = "H")]
    step: Option<f64>,
    /// Number of grid points
    #[arg(long, global = true, value_name = "N")]
    grid: Option<usize>,
    #[arg(long = "grid-lo", global = true, allow_hyphen_values = true)]
    grid_lo: Option<f64>,
    #[arg(long = "grid-hi", global = true, allow_hyphen_values = true)]
    grid_hi: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true, value_name = "NAME")]
    suite: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Starting state, comma separated
    #[arg(long, global = true, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Reflection boundary in the reduced coordinate
    #[arg(long, global = true, allow_hyphen_values = true)]
    boundary: Option<f64>,
    /// Stopping method: fd, lsmc (or auto for verify)
    #[arg(long, global = true)]
    method: Option<String>,
    /// Check id for refine
    #[arg(long, global = true)]
    check: Option<String>,
    /// Refinement ladder, comma separated
    #[arg(long, global = true)]
    ladder: Option<String>,
}

fn str_value(s: &str) -> Value {
    Value::String(s.into())
}

fn float_list(key: &str, s: &str) -> Result<Value, ConfigError> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<f64>().map(Value::Float).map_err(|_| ConfigError::Type {
                key: key.into(),
                expected: "a comma-separated list of numbers",
                got: s.into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Value::Array)
}

fn resolve(flags: &Flags) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for pair in &flags.set {
        cfg.set_pair(pair)?;
    }
    // a flag naming the model source replaces whatever source the file named
    if flags.preset.is_some() || flags.app.is_some() || flags.model.is_some() {
        for k in ["model.preset", "model.app", "model.file"] {
            cfg.remove(k);
        }
    }
    let strings = [
        ("model.preset", flags.preset.as_deref()),
        ("model.app", flags.app.as_deref()),
        ("verify.suite", flags.suite.as_deref()),
        ("stopping.method", flags.method.as_deref()),
        ("refine.check", flags.check.as_deref()),
    ];
    for (k, v) in strings {
        if let Some(v) = v {
            cfg.set(k, str_value(v))?;
        }
    }
    for (k, v) in [("model.file", &flags.model), ("cost.file", &flags.cost), ("run.out", &flags.out)] {
        if let Some(p) = v {
            cfg.set(k, str_value(&p.to_string_lossy()))?;
        }
    }
    if let Some(s) = flags.seed {
        // u64 seeds above i64::MAX do not fit a TOML integer
        cfg.set("run.seed", i64::try_from(s).map_or_else(|_| str_value(&s.to_string()), Value::Integer))?;
    }
    for (k, v) in [("run.paths", flags.paths), ("grid.n", flags.grid), ("run.threads", flags.threads)] {
        if let Some(v) = v {
            cfg.set(k, Value::Integer(v as i64))?;
        }
    }
    let floats = [
        ("run.horizon", flags.horizon),
        ("run.step", flags.step),
        ("grid.lo", flags.grid_lo),
        ("grid.hi", flags.grid_hi),
        ("derivative.eps", flags.eps),
        ("control.boundary", flags.boundary),
    ];
    for (k, v) in floats {
        if let Some(v) = v {
            cfg.set(k, Value::Float(v))?;
        }
    }
    if let Some(s) = &flags.x0 {
        cfg.set("run.x0", float_list("run.x0", s)?)?;
    }
    if let Some(s) = &flags.ladder {
        cfg.set("refine.ladder", float_list("refine.ladder", s)?)?;
    }
    if !cfg.contains("run.seed") {
        if let Ok(s) = std::env::var("HF_SEED") {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("HF_SEED must be an unsigned integer, got '{s}'")))?;
            cfg.set("run.seed", i64::try_from(seed).map_or_else(|_| str_value(&seed.to_string()), Value::Integer))?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match resolve(&cli.flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command, &cfg) {
        Ok(passed) => ExitCode::from(if passed { 0 } else { 1 }),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
