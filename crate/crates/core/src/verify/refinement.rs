use rand::Rng;
use serde::Serialize;

use crate::costs::{closed_form_null_cost, estimate_cost_functional, CostSpec, McConfig};
use crate::dynamics::{decompose_control, NoAction, TimeGrid};
use crate::error::{Error, Result};
use crate::numerics::{fitted_order, fmt17, path_rng};
use crate::spectral_model::SpectralModel;
use crate::stopping::{boundary_mismatch, solve_vi_fd, Grid1D, Reduction};

use super::{config_hash, VerifyConfig};

pub const REFINEMENT_CHECKS: [&str; 5] = ["smooth_fit", "vi_residual", "null_cost_h", "null_cost_paths", "decompose"];

/// Observed convergence order of a ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedOrder {
    /// Every defect is zero to machine precision.
    Exact,
    Fitted(f64),
    /// Too few positive or resolved defects to fit a slope.
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementLevel {
    /// Grid spacing, time step or path count of the level.
    pub parameter: f64,
    pub defect: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementTable {
    pub check: String,
    pub levels: Vec<RefinementLevel>,
    pub order: FittedOrder,
    pub config_hash: String,
}

impl RefinementTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# config_hash = {}\n# order = {}\nparameter,defect,std_error\n", self.config_hash, self.order_label());
        for l in &self.levels {
            let se = l.std_error.map_or(String::new(), fmt17);
            s.push_str(&format!("{},{},{se}\n", fmt17(l.parameter), fmt17(l.defect)));
        }
        s
    }

    pub fn order_label(&self) -> String {
        match self.order {
            FittedOrder::Exact => "exact".into(),
            FittedOrder::Fitted(p) => format!("{p:.4}"),
            FittedOrder::Undetermined => "undetermined".into(),
        }
    }
}

fn classify(levels: &[RefinementLevel]) -> FittedOrder {
    if levels.iter().all(|l| l.defect == 0.0) {
        return FittedOrder::Exact;
    }
    // a Monte Carlo defect inside its noise band carries no slope information
    let resolved: Vec<&RefinementLevel> =
        levels.iter().filter(|l| l.std_error.is_none_or(|se| l.defect > 3.0 * se)).collect();
    if resolved.len() < 2 {
        return FittedOrder::Undetermined;
    }
    let h: Vec<f64> = resolved.iter().map(|l| l.parameter).collect();
    let d: Vec<f64> = resolved.iter().map(|l| l.defect).collect();
    fitted_order(&h, &d).map_or(FittedOrder::Undetermined, FittedOrder::Fitted)
}

fn fd_grid(reduction: &Reduction, config: &VerifyConfig, coarse: f64, spacing: f64) -> Result<Grid1D> {
    let auto = reduction.default_grid(coarse, 8.0)?;
    Grid1D::with_spacing(config.grid_lo.unwrap_or(auto.lo()), config.grid_hi.unwrap_or(auto.hi()), spacing)
}

/// Runs one check over a ladder of refinement parameters and fits the
/// observed order. Ladders of spacings and steps are in any order; path
/// counts are rounded to integers.
pub fn refinement_study(
    model: &SpectralModel,
    cost: &CostSpec,
    check_id: &str,
    ladder: &[f64],
    config: &VerifyConfig,
) -> Result<RefinementTable> {
    if ladder.len() < 3 {
        return Err(Error::InvalidParams(format!("a refinement ladder needs at least 3 levels, got {}", ladder.len())));
    }
    if ladder.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidParams("refinement parameters must be positive".into()));
    }
    let horizon = config.horizon.unwrap_or(12.0 / model.discount());
    let x0 = config.x0.clone().unwrap_or_else(|| {
        let mut x = vec![0.0; model.dim()];
        x[model.control_mode()] = 1.0;
        x
    });
    let coarse = ladder.iter().copied().fold(0.0, f64::max);
    let levels: Vec<RefinementLevel> = match check_id {
        "smooth_fit" => {
            let r = Reduction::new(model, cost)?;
            ladder
                .iter()
                .map(|d| {
                    let sol = solve_vi_fd(model, cost, &fd_grid(&r, config, coarse, *d)?)?;
                    Ok(RefinementLevel { parameter: *d, defect: boundary_mismatch(&sol)?, std_error: None })
                })
                .collect::<Result<_>>()?
        }
        "vi_residual" => {
            // distance of U at the payoff pivot from a solve four times finer
            let r = Reduction::new(model, cost)?;
            let finest = ladder.iter().copied().fold(f64::INFINITY, f64::min);
            let reference = solve_vi_fd(model, cost, &fd_grid(&r, config, coarse, finest / 4.0)?)?;
            let y = r.pivot();
            ladder
                .iter()
                .map(|d| {
                    let sol = solve_vi_fd(model, cost, &fd_grid(&r, config, coarse, *d)?)?;
                    Ok(RefinementLevel { parameter: *d, defect: (sol.value_at(y) - reference.value_at(y)).abs(), std_error: None })
                })
                .collect::<Result<_>>()?
        }
        "null_cost_h" => {
            let exact = closed_form_null_cost(model, cost, &x0)?;
            let mc = McConfig::new(config.n_paths, config.seed);
            ladder
                .iter()
                .map(|h| {
                    let est = estimate_cost_functional(model, cost, &x0, &NoAction, &TimeGrid::with_step(horizon, *h)?, &mc)?;
                    Ok(RefinementLevel { parameter: *h, defect: (est.mean - exact).abs(), std_error: Some(est.std_error) })
                })
                .collect::<Result<_>>()?
        }
        "null_cost_paths" => {
            // the standard error itself, expected to fall like n^(-1/2)
            let grid = TimeGrid::with_step(horizon, config.step)?;
            ladder
                .iter()
                .map(|n| {
                    let n = n.round().max(2.0) as usize;
                    let est = estimate_cost_functional(model, cost, &x0, &NoAction, &grid, &McConfig::new(n, config.seed))?;
                    Ok(RefinementLevel { parameter: n as f64, defect: est.std_error, std_error: None })
                })
                .collect::<Result<_>>()?
        }
        "decompose" => ladder
            .iter()
            .map(|h| {
                let grid = TimeGrid::with_step(1.0, *h)?;
                let mut rng = path_rng(config.seed, h.to_bits());
                let q = model.price();
                let raw: Vec<Vec<f64>> = (0..=grid.n_steps())
                    .map(|_| q.iter().map(|qk| if *qk > 0.0 { rng.random::<f64>() } else { 0.0 }).collect())
                    .collect();
                let back = decompose_control(model, grid, &raw)?.reconstruct();
                let defect = raw.iter().flatten().zip(back.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                Ok(RefinementLevel { parameter: *h, defect, std_error: None })
            })
            .collect::<Result<_>>()?,
        other => {
            return Err(Error::InvalidParams(format!(
                "unknown refinement check '{other}' (known: {})",
                REFINEMENT_CHECKS.join(", ")
            )))
        }
    };
    Ok(RefinementTable {
        check: check_id.into(),
        order: classify(&levels),
        levels,
        config_hash: config_hash(model, cost, &format!("refine:{check_id}"), config)?,
    })
}
