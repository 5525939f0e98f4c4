use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use monofollow::apps::{ClimateParams, EnergyParams};
use monofollow::control_solver::{
    default_eps, directional_derivative_V, estimate_V, optimize_threshold_on, DerivativeConfig, FixedPolicy,
    ReflectionPolicy,
};
use monofollow::costs::{closed_form_null_cost, estimate_cost_functional, CostSpec, McConfig};
use monofollow::dynamics::{simulate_batch, NoAction, TimeGrid};
use monofollow::error::Error;
use monofollow::numerics::{fmt17, SampleStats};
use monofollow::presets::{self, Preset};
use monofollow::spectral_model::{phi_closed_form, SpectralModel};
use monofollow::stopping::{boundary_mismatch, solve_lsmc_with, solve_vi_fd, Grid1D, LsmcSettings, Reduction};
use monofollow::verify::{refinement_study, run_suite, StoppingMethod, VerifyConfig};
use thiserror::Error as ThisError;

use crate::config::{ConfigError, RunConfig};
use crate::Command;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Read { .. } => 2,
            CliError::Core(e) => match e {
                Error::InvalidModel(_)
                | Error::InvalidCost(_)
                | Error::InvalidParams(_)
                | Error::InvalidDiscount(_)
                | Error::InvalidGrid(_)
                | Error::InvalidMonteCarlo(_)
                | Error::DimensionMismatch { .. }
                | Error::UnknownSuite(_)
                | Error::Serialization(_)
                | Error::NonDissipative { .. }
                | Error::ZeroPriceOnDirection { .. }
                | Error::NegativePriceOnDirection { .. }
                | Error::PriceFloorViolated(_)
                | Error::BudgetTooSmall { .. } => 2,
                _ => 1,
            },
            CliError::Write { .. } => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// The model, cost and default start a run works on.
struct Problem {
    name: String,
    model: SpectralModel,
    cost: CostSpec,
    x0: Vec<f64>,
    /// Application parameters after overrides, when the model is an app.
    params: Option<String>,
}

fn with_overrides<P: serde::Serialize + serde::de::DeserializeOwned>(defaults: P, overrides: toml::Table) -> Result<P> {
    let mut table = toml::Table::try_from(&defaults).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    for (k, v) in overrides {
        if !table.contains_key(&k) {
            return Err(ConfigError::UnknownKey(format!("app.{k}")).into());
        }
        // integers are accepted where floats are expected
        let v = match (&table[&k], v) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::Array(_), toml::Value::Array(a)) => toml::Value::Array(
                a.into_iter().map(|x| if let toml::Value::Integer(i) = x { toml::Value::Float(i as f64) } else { x }).collect(),
            ),
            (_, v) => v,
        };
        table.insert(k, v);
    }
    table.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(format!("app parameters: {}", e.message())).into())
}

fn read(path: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })
}

fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    let preset = cfg.string("model.preset")?;
    let app = cfg.string("model.app")?;
    let file = cfg.string("model.file")?;
    let given = [preset.is_some(), app.is_some(), file.is_some()].iter().filter(|b| **b).count();
    if given > 1 {
        return Err(ConfigError::Invalid("give only one of --preset, --app and --model".into()).into());
    }
    let overrides = cfg.app_overrides();
    let mut problem = if let Some(path) = file {
        let model = SpectralModel::from_toml(&read(&path)?)?;
        let cost_path = cfg.string("cost.file")?.ok_or_else(|| ConfigError::Invalid("--model needs --cost".into()))?;
        let cost = CostSpec::from_toml(&read(&cost_path)?)?;
        let mut x0 = vec![0.0; model.dim()];
        x0[model.control_mode()] = 1.0;
        Problem { name: path, model, cost, x0, params: None }
    } else {
        let name = app.or(preset).unwrap_or_else(|| "bench1d".into());
        let (p, params): (Preset, Option<String>) = match name.as_str() {
            "energy" => {
                let params = with_overrides(EnergyParams::default(), overrides.clone())?;
                let text = toml::to_string(&params).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                (presets::energy(&params)?, Some(text))
            }
            "climate" => {
                let params = with_overrides(ClimateParams::default(), overrides.clone())?;
                let text = toml::to_string(&params).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                (presets::climate(&params)?, Some(text))
            }
            other => (presets::preset(other)?, None),
        };
        if params.is_none() && !overrides.is_empty() {
            return Err(ConfigError::Invalid(format!("app.* keys only apply to energy and climate, not {name}")).into());
        }
        Problem { name: p.name, model: p.model, cost: p.cost, x0: p.x0, params }
    };
    if cfg.string("cost.file")?.is_some() && !cfg.contains("model.file") {
        problem.cost = CostSpec::from_toml(&read(&cfg.string("cost.file")?.expect("checked"))?)?;
    }
    if let Some(x0) = cfg.f64_list("run.x0")? {
        problem.model.check_dim(&x0)?;
        problem.x0 = x0;
    }
    Ok(problem)
}

struct Output {
    dir: PathBuf,
    hash: String,
}

impl Output {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = PathBuf::from(cfg.string("run.out")?.unwrap_or_else(|| "out".into()));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
        Ok(Self { dir, hash: cfg.hash() })
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|source| CliError::Write { path: path.clone(), source })?;
        Ok(path)
    }

    /// CSV with the config hash as a leading comment line.
    fn csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, &format!("# config_hash = {}\n{body}", self.hash))
    }

    /// TOML with the config hash as its first key.
    fn toml(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, &format!("config_hash = \"{}\"\n{body}", self.hash))
    }
}

fn f(x: f64) -> String {
    if x.is_finite() {
        fmt17(x)
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", "))
}

fn seed(cfg: &RunConfig) -> Result<u64> {
    Ok(cfg.u64("run.seed")?.unwrap_or(7))
}

fn horizon(cfg: &RunConfig, model: &SpectralModel, default: f64) -> Result<f64> {
    Ok(cfg.f64("run.horizon")?.unwrap_or(default / model.discount()))
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<bool> {
    let threads = match cfg.usize("run.threads")? {
        Some(0) => return Err(ConfigError::Invalid("--threads must be positive".into()).into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let problem = load_problem(cfg)?;
    let out = Output::new(cfg)?;
    out.write("config.toml", &format!("# config_hash = {}\n{}", out.hash, cfg.to_toml()))?;
    let start = Instant::now();
    let (passed, extra) = match command {
        Command::Simulate => (simulate(cfg, &problem, &out)?, String::new()),
        Command::SolveStopping => (solve_stopping(cfg, &problem, &out)?, String::new()),
        Command::SolveControl => (solve_control(cfg, &problem, &out)?, String::new()),
        Command::Derivative => (derivative(cfg, &problem, &out)?, String::new()),
        Command::Verify => verify(cfg, &problem, &out)?,
        Command::Refine => (refine(cfg, &problem, &out)?, String::new()),
        Command::App => (app(&problem, &out)?, String::new()),
    };
    // wall-clock times live only here, never in the artifacts
    let log = format!("command = \"{command:?}\"\nthreads = {threads}\nwall_seconds = {:.3}\n{extra}", start.elapsed().as_secs_f64());
    out.write("timing.log", &log)?;
    Ok(passed)
}

fn simulate(cfg: &RunConfig, p: &Problem, out: &Output) -> Result<bool> {
    let m = &p.model;
    let grid = TimeGrid::with_step(cfg.f64("run.horizon")?.unwrap_or(1.0), cfg.f64("run.step")?.unwrap_or(1e-2))?;
    let mc = McConfig::new(cfg.usize("run.paths")?.unwrap_or(1000), seed(cfg)?);
    let paths = simulate_batch(m, &p.x0, &grid, &mc)?;
    let mut csv = String::from("path,time");
    for k in 0..m.dim() {
        write!(csv, ",mode_{}", k + 1).expect("string write");
    }
    csv.push('\n');
    for (i, path) in paths.iter().enumerate() {
        for (j, x) in path.values.iter().enumerate() {
            write!(csv, "{i},{}", f(grid.time(j))).expect("string write");
            for v in x {
                write!(csv, ",{}", f(*v)).expect("string write");
            }
            csv.push('\n');
        }
    }
    out.csv("paths.csv", &csv)?;

    let cost = estimate_cost_functional(m, &p.cost, &p.x0, &NoAction, &grid, &mc)?;
    let mut summary = format!(
        "model = \"{}\"\nn_paths = {}\nseed = {}\nhorizon = {}\nstep = {}\nx0 = {}\n",
        p.name,
        mc.n_paths,
        mc.seed,
        f(grid.horizon()),
        f(grid.step()),
        list(&p.x0)
    );
    let terminal: Vec<SampleStats> = (0..m.dim())
        .map(|k| SampleStats::from_slice(&paths.iter().map(|q| q.values.last().expect("nonempty path")[k]).collect::<Vec<_>>()))
        .collect();
    writeln!(summary, "terminal_mean = {}", list(&terminal.iter().map(|s| s.mean).collect::<Vec<_>>())).expect("string write");
    writeln!(summary, "terminal_std_error = {}", list(&terminal.iter().map(|s| s.std_error).collect::<Vec<_>>())).expect("string write");
    writeln!(summary, "truncated_null_cost = {}\ntruncated_null_cost_std_error = {}", f(cost.mean), f(cost.std_error)).expect("string write");
    writeln!(summary, "closed_form_null_cost = {}", f(closed_form_null_cost(m, &p.cost, &p.x0)?)).expect("string write");
    out.toml("summary.toml", &summary)?;
    println!("simulated {} paths of {} steps; truncated null cost {:.6} +- {:.2e}", mc.n_paths, grid.n_steps(), cost.mean, cost.std_error);
    Ok(true)
}

/// Grid from `grid.*` keys, defaulting to spacing 1e-2 over the reduction's range.
fn fd_grid(cfg: &RunConfig, red: &Reduction) -> Result<Grid1D> {
    let auto = red.default_grid(1e-2, 8.0)?;
    let lo = cfg.f64("grid.lo")?.unwrap_or(auto.lo());
    let hi = cfg.f64("grid.hi")?.unwrap_or(auto.hi());
    let n = match cfg.usize("grid.n")? {
        Some(n) => n,
        None => ((hi - lo) / 1e-2).round() as usize + 1,
    };
    Ok(Grid1D::new(lo, hi, n)?)
}

fn solve_stopping(cfg: &RunConfig, p: &Problem, out: &Output) -> Result<bool> {
    let method = cfg.string("stopping.method")?.unwrap_or_else(|| "fd".into());
    match method.as_str() {
        "fd" => {
            let red = Reduction::new(&p.model, &p.cost)?;
            let grid = fd_grid(cfg, &red)?;
            let sol = solve_vi_fd(&p.model, &p.cost, &grid)?;
            out.csv("stopping.csv", &sol.to_csv())?;
            let b = sol.boundary.map_or("nan".into(), f);
            let mismatch = boundary_mismatch(&sol).map_or(f64::NAN, |m| m);
            let summary = format!(
                "method = \"fd\"\nmodel = \"{}\"\ngrid_lo = {}\ngrid_hi = {}\ngrid_points = {}\nboundary = {b}\niterations = {}\n\
                 max_obstacle_violation = {}\nmax_continuation_residual = {}\nmin_operator_value = {}\nboundary_mismatch = {}\n\
                 reduction_weights = {}\nphi_slope = {}\nphi_intercept = {}\n",
                p.name,
                f(grid.lo()),
                f(grid.hi()),
                grid.n_points(),
                sol.iterations,
                f(sol.max_obstacle_violation()),
                f(sol.max_continuation_residual()),
                f(sol.min_operator_value()),
                f(mismatch),
                list(&red.weights),
                f(red.phi_slope),
                f(red.phi_intercept),
            );
            out.toml("stopping.toml", &summary)?;
            println!("free boundary {b} on {} points", grid.n_points());
        }
        "lsmc" => {
            let k = p.model.control_mode();
            let s = p.model.stationary_std(k);
            let phi = phi_closed_form(&p.model, &p.cost)?;
            let mut base = p.x0.clone();
            base[k] = 0.0;
            let pivot = if phi.slope[k] != 0.0 { -phi.eval(&base) / phi.slope[k] } else { 0.0 };
            // training starts spread around x0, with the control mode at the pivot
            let mut center = base.clone();
            center[k] = pivot;
            let settings = LsmcSettings {
                step: cfg.f64("stopping.lsmc_step")?.unwrap_or(5e-3),
                horizon: cfg.f64("run.horizon")?,
                degree: cfg.usize("stopping.degree")?.unwrap_or(3),
                center: Some(center),
                ..LsmcSettings::default()
            };
            let mc = McConfig::new(cfg.usize("run.paths")?.unwrap_or(20_000), seed(cfg)?);
            let sol = solve_lsmc_with(&p.model, &p.cost, &mc, &settings)?;
            out.write("lsmc.toml", &format!("config_hash = \"{}\"\n{}", out.hash, sol.to_toml()?))?;
            let value = sol.value_at(&p.x0, &McConfig::new(mc.n_paths, mc.seed))?;
            let frontier = sol.stopping_frontier(&base, pivot - 10.0 * s, pivot + 2.0 * s, 1e-2);
            let summary = format!(
                "method = \"lsmc\"\nmodel = \"{}\"\nn_paths = {}\nseed = {}\nstep = {}\ndegree = {}\nfrontier_control_mode = {}\n\
                 x0 = {}\nvalue = {}\nvalue_std_error = {}\n",
                p.name,
                mc.n_paths,
                mc.seed,
                f(settings.step),
                settings.degree,
                frontier.map_or("nan".into(), f),
                list(&p.x0),
                f(value.mean),
                f(value.std_error),
            );
            out.toml("stopping.toml", &summary)?;
            println!("regression frontier {:?}; U(x0) = {:.6} +- {:.2e}", frontier, value.mean, value.std_error);
        }
        other => return Err(ConfigError::Invalid(format!("unknown stopping method '{other}' (fd or lsmc)")).into()),
    }
    Ok(true)
}

/// Reflection boundary and its trigger: the configured value, else the
/// finite-difference free boundary.
fn boundary(cfg: &RunConfig, p: &Problem) -> Result<(f64, Vec<f64>)> {
    let red = Reduction::new(&p.model, &p.cost);
    let trigger = match &red {
        Ok(r) => r.weights.clone(),
        Err(_) => {
            let mut t = vec![0.0; p.model.dim()];
            t[p.model.control_mode()] = 1.0;
            t
        }
    };
    if let Some(b) = cfg.f64("control.boundary")? {
        return Ok((b, trigger));
    }
    let red = red.map_err(|_| ConfigError::Invalid("payoff does not reduce to one coordinate; give --boundary".into()))?;
    let sol = solve_vi_fd(&p.model, &p.cost, &fd_grid(cfg, &red)?)?;
    Ok((sol.boundary.ok_or(Error::NoBoundary)?, trigger))
}

fn solve_control(cfg: &RunConfig, p: &Problem, out: &Output) -> Result<bool> {
    let (b, trigger) = boundary(cfg, p)?;
    let candidates = match cfg.f64_list("control.candidates")? {
        Some(c) => c,
        None => {
            let n = cfg.usize("control.candidate_count")?.unwrap_or(21).max(1);
            let d = cfg.f64("control.candidate_spacing")?.unwrap_or(0.05);
            (0..n).map(|j| b + (j as f64 - (n - 1) as f64 / 2.0) * d).collect()
        }
    };
    let grid = TimeGrid::with_step(horizon(cfg, &p.model, 12.0)?, cfg.f64("run.step")?.unwrap_or(1e-2))?;
    let mc = McConfig::new(cfg.usize("run.paths")?.unwrap_or(5_000), seed(cfg)?);
    let sweep = optimize_threshold_on(&p.model, &p.cost, &p.x0, &candidates, &trigger, &grid, &mc)?;
    let mut csv = String::from("boundary,estimate,std_error,diff_std_error\n");
    for c in &sweep.curve {
        writeln!(csv, "{},{},{},{}", f(c.boundary), f(c.estimate), f(c.std_error), f(c.diff_std_error)).expect("string write");
    }
    out.csv("sweep.csv", &csv)?;
    let best = &sweep.curve[sweep.best_index];
    let summary = format!(
        "model = \"{}\"\nx0 = {}\nn_paths = {}\nseed = {}\nhorizon = {}\nstep = {}\nbest_boundary = {}\nbest_value = {}\n\
         best_value_std_error = {}\n",
        p.name,
        list(&p.x0),
        mc.n_paths,
        mc.seed,
        f(grid.horizon()),
        f(grid.step()),
        f(sweep.best_boundary),
        f(best.estimate),
        f(best.std_error),
    );
    out.toml("control.toml", &summary)?;
    println!("best reflection boundary {:.4}: V(x0) = {:.6} +- {:.2e}", sweep.best_boundary, best.estimate, best.std_error);
    Ok(true)
}

fn derivative(cfg: &RunConfig, p: &Problem, out: &Output) -> Result<bool> {
    let m = &p.model;
    let (b, trigger) = boundary(cfg, p)?;
    let policy = ReflectionPolicy::on_coordinate(b, m, trigger)?;
    let grid = TimeGrid::with_step(horizon(cfg, m, 12.0)?, cfg.f64("run.step")?.unwrap_or(2.5e-3))?;
    let dc = DerivativeConfig { eps: cfg.f64("derivative.eps")?.unwrap_or_else(|| default_eps(m)), reuse_policy: true, grid };
    let mc = McConfig::new(cfg.usize("run.paths")?.unwrap_or(10_000), seed(cfg)?);
    let d = directional_derivative_V(m, &p.cost, &p.x0, &FixedPolicy(policy.clone()), &dc, &mc)?;
    let value = estimate_V(m, &p.cost, &p.x0, &policy, &grid, &mc)?;
    let mut summary = format!(
        "model = \"{}\"\nx0 = {}\nboundary = {}\neps = {}\nn_paths = {}\nseed = {}\nderivative = {}\nderivative_std_error = {}\n\
         value = {}\nvalue_std_error = {}\n",
        p.name,
        list(&p.x0),
        f(b),
        f(d.eps),
        mc.n_paths,
        mc.seed,
        f(d.estimate),
        f(d.std_error),
        f(value.estimate),
        f(value.std_error),
    );
    if let Ok(red) = Reduction::new(m, &p.cost) {
        let sol = solve_vi_fd(m, &p.cost, &fd_grid(cfg, &red)?)?;
        let target = sol.value_at_state(&p.x0) - 1.0 - phi_closed_form(m, &p.cost)?.eval(&p.x0);
        writeln!(summary, "u_minus_1_minus_phi = {}\ndifference = {}", f(target), f(d.estimate - target)).expect("string write");
        println!("derivative {:.6} +- {:.2e}; U - 1 - Phi = {:.6}", d.estimate, d.std_error, target);
    } else {
        println!("derivative {:.6} +- {:.2e}", d.estimate, d.std_error);
    }
    out.toml("derivative.toml", &summary)?;
    Ok(true)
}

fn verify_config(cfg: &RunConfig, p: &Problem) -> Result<VerifyConfig> {
    let d = VerifyConfig::default();
    let method = match cfg.string("verify.method")?.or(cfg.string("stopping.method")?).as_deref() {
        None | Some("auto") => StoppingMethod::Auto,
        Some("fd") => StoppingMethod::Fd,
        Some("lsmc") => StoppingMethod::Lsmc,
        Some(other) => return Err(ConfigError::Invalid(format!("unknown stopping method '{other}' (fd, lsmc or auto)")).into()),
    };
    let mut v = VerifyConfig {
        n_paths: cfg.usize("run.paths")?.unwrap_or(d.n_paths),
        seed: seed(cfg)?,
        x0: Some(p.x0.clone()),
        horizon: cfg.f64("run.horizon")?,
        step: cfg.f64("run.step")?.unwrap_or(d.step),
        fine_step: cfg.f64("verify.fine_step")?.unwrap_or(d.fine_step),
        null_cost_step: cfg.f64("verify.null_cost_step")?.unwrap_or(d.null_cost_step),
        grid_spacing: cfg.f64("verify.grid_spacing")?.unwrap_or(d.grid_spacing),
        grid_lo: cfg.f64("grid.lo")?,
        grid_hi: cfg.f64("grid.hi")?,
        eps: cfg.f64("derivative.eps")?,
        method,
        lsmc_step: cfg.f64("verify.lsmc_step")?.unwrap_or(d.lsmc_step),
    };
    if let Some(n) = cfg.usize("grid.n")? {
        let (lo, hi) = match (v.grid_lo, v.grid_hi) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(ConfigError::Invalid("--grid with verify needs --grid-lo and --grid-hi".into()).into()),
        };
        if n < 3 {
            return Err(ConfigError::Invalid("--grid needs at least 3 points".into()).into());
        }
        v.grid_spacing = (hi - lo) / (n - 1) as f64;
    }
    Ok(v)
}

fn verify(cfg: &RunConfig, p: &Problem, out: &Output) -> Result<(bool, String)> {
    let suite = cfg.string("verify.suite")?.unwrap_or_else(|| "all".into());
    let vc = verify_config(cfg, p)?;
    let report = run_suite(&p.model, &p.cost, &suite, &vc)?;
    // the report carries its own hash of the verification inputs
    out.write("report.toml", &format!("run_config_hash = \"{}\"\n{}", out.hash, report.to_toml()))?;
    let table = report.to_table();
    out.write("report.txt", &format!("config_hash = {}\n{table}", out.hash))?;
    print!("{table}");
    Ok((report.overall_pass(), report.timing_sidecar()))
}

fn default_ladder(check: &str) -> Vec<f64> {
    match check {
        "null_cost_paths" => vec![1_000.0, 4_000.0, 16_000.0],
        "decompose" => vec![1e-1, 5e-2, 2.5e-2],
        _ => vec![4e-2, 2e-2, 1e-2],
    }
}

fn refine(cfg: &RunConfig, p: &Problem, out: &Output) -> Result<bool> {
    let check = cfg.string("refine.check")?.ok_or_else(|| ConfigError::Invalid("refine needs --check".into()))?;
    let ladder = cfg.f64_list("refine.ladder")?.unwrap_or_else(|| default_ladder(&check));
    let mut vc = verify_config(cfg, p)?;
    if !cfg.contains("run.paths") {
        vc.n_paths = 10_000;
    }
    let table = refinement_study(&p.model, &p.cost, &check, &ladder, &vc)?;
    out.csv("refine.csv", &table.to_csv())?;
    println!("{check}: order {}", table.order_label());
    for l in &table.levels {
        println!("  {:>12.4e}  {:>12.4e}  {}", l.parameter, l.defect, l.std_error.map_or("-".into(), |s| format!("{s:.3e}")));
    }
    Ok(true)
}

fn app(p: &Problem, out: &Output) -> Result<bool> {
    out.toml("model.toml", &p.model.to_toml()?)?;
    out.toml("cost.toml", &p.cost.to_toml()?)?;
    let mut dump = format!("name = \"{}\"\nx0 = {}\n", p.name, list(&p.x0));
    if let Some(params) = &p.params {
        out.toml("params.toml", params)?;
        dump.push_str("params = \"params.toml\"\n");
    }
    out.toml("preset.toml", &dump)?;
    println!("wrote {} preset to {}", p.name, display(&out.dir));
    Ok(true)
}

fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
