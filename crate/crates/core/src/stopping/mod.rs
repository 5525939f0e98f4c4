//! Optimal stopping problem `U(x) = sup_tau E[e^{-(rho - lambda) tau} Phi(X_tau)]`
//! solved on a one-dimensional reduction by finite differences and on the
//! full mode vector by regression Monte Carlo.

mod fd;
mod lsmc;

pub use fd::{solve_vi_fd, solve_vi_fd_with, FdSettings, ObstacleMode};
pub use lsmc::{solve_lsmc, solve_lsmc_with, LsmcSettings, LsmcSolution, RegressionStep, StoppingEstimate};

use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::numerics::{fitted_order, fmt17};
use crate::spectral_model::{phi_closed_form, SpectralModel};

/// Uniform one-dimensional grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n_points: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidGrid(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if n_points < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 points, got {n_points}")));
        }
        Ok(Self { lo, hi, n_points })
    }

    /// Grid on `[lo, hi]` with spacing `dy`; `hi - lo` must be a multiple of `dy`.
    pub fn with_spacing(lo: f64, hi: f64, dy: f64) -> Result<Self> {
        let cells = (hi - lo) / dy;
        let n = cells.round();
        if !(dy > 0.0) || (cells - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidGrid(format!("spacing {dy} does not divide [{lo}, {hi}]")));
        }
        Self::new(lo, hi, n as usize + 1)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }
}

/// The stopping payoff written in one coordinate `y = <a, x>` with
/// `a_{k*} = 1`. Exact whenever every mode in the support of the slope of
/// `Phi` shares the eigenvalue of the control mode: then `y` is itself an
/// OU process with that eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub weights: Vec<f64>,
    pub eigenvalue: f64,
    pub noise: f64,
    pub rate: f64,
    pub phi_slope: f64,
    pub phi_intercept: f64,
    /// Change of `y` per unit of control intensity along the direction.
    pub shift: f64,
}

impl Reduction {
    pub fn new(model: &SpectralModel, cost: &CostSpec) -> Result<Self> {
        let phi = phi_closed_form(model, cost)?;
        let k = model.control_mode();
        let lam = model.control_eigenvalue();
        let gk = phi.slope[k];
        let mut weights = vec![0.0; model.dim()];
        if phi.slope.iter().all(|g| *g == 0.0) {
            weights[k] = 1.0;
        } else {
            if gk == 0.0 {
                return Err(Error::NotReducible("payoff does not depend on the control mode".into()));
            }
            for (j, g) in phi.slope.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                let lj = model.eigenvalues()[j];
                if (lj - lam).abs() > 1e-12 * lam.abs() {
                    return Err(Error::NotReducible(format!(
                        "mode {j} enters the payoff with eigenvalue {lj}, control mode has {lam}"
                    )));
                }
                weights[j] = g / gk;
            }
        }
        let noise = weights.iter().zip(model.noise()).map(|(a, s)| a * a * s * s).sum::<f64>().sqrt();
        Ok(Self {
            shift: weights[k] * model.direction_norm(),
            weights,
            eigenvalue: lam,
            noise,
            rate: model.stopping_rate(),
            phi_slope: gk,
            phi_intercept: phi.intercept,
        })
    }

    pub fn coordinate(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(x, a)| x * a).sum()
    }

    pub fn phi(&self, y: f64) -> f64 {
        self.phi_slope * y + self.phi_intercept
    }

    /// Stationary standard deviation of the reduced coordinate.
    pub fn stationary_std(&self) -> f64 {
        self.noise / (2.0 * self.eigenvalue.abs()).sqrt()
    }

    /// Point where the payoff changes sign (or zero for a flat payoff).
    pub fn pivot(&self) -> f64 {
        if self.phi_slope == 0.0 {
            0.0
        } else {
            -self.phi_intercept / self.phi_slope
        }
    }

    /// Grid covering `margin` stationary standard deviations around the
    /// origin and the payoff pivot, snapped to multiples of `spacing`.
    pub fn default_grid(&self, spacing: f64, margin: f64) -> Result<Grid1D> {
        let std = self.stationary_std().max(1e-3);
        let p = self.pivot().clamp(-1e3, 1e3);
        let lo = ((p.min(0.0) - margin * std) / spacing).floor() * spacing;
        let hi = ((p.max(0.0) + margin * std) / spacing).ceil() * spacing;
        Grid1D::with_spacing(lo, hi, spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Stop,
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSolution {
    pub grid: Grid1D,
    pub reduction: Reduction,
    pub u_values: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub region: Vec<Region>,
    pub boundary: Option<f64>,
    pub boundary_index: Option<usize>,
    pub du_values: Vec<f64>,
    /// `min(L u, u - Phi)` at interior nodes, boundary-condition defect at the ends.
    pub residuals: Vec<f64>,
    /// Discrete operator `(rho - lambda) u - lambda y u' - s^2 u'' / 2` at interior nodes.
    pub operator_values: Vec<f64>,
    pub iterations: usize,
    pub obstacle: ObstacleMode,
}

impl StoppingSolution {
    /// Linear interpolation of `u` in the reduced coordinate, clamped to the grid.
    pub fn value_at(&self, y: f64) -> f64 {
        interpolate(&self.grid, &self.u_values, y)
    }

    pub fn value_at_state(&self, x: &[f64]) -> f64 {
        self.value_at(self.reduction.coordinate(x))
    }

    /// `U - 1 - Phi`, the directional derivative of the control value.
    pub fn marginal_value(&self, y: f64) -> f64 {
        self.value_at(y) - 1.0 - self.reduction.phi(y)
    }

    pub fn max_obstacle_violation(&self) -> f64 {
        self.u_values.iter().zip(&self.phi_values).map(|(u, p)| (p - u).max(0.0)).fold(0.0, f64::max)
    }

    /// Largest `|L u|` over interior continuation nodes.
    pub fn max_continuation_residual(&self) -> f64 {
        (1..self.grid.n_points() - 1)
            .filter(|&i| self.region[i] == Region::Continue)
            .map(|i| self.operator_values[i].abs())
            .fold(0.0, f64::max)
    }

    /// Most negative `L u` over interior nodes (zero if none is negative).
    pub fn min_operator_value(&self) -> f64 {
        (1..self.grid.n_points() - 1).map(|i| self.operator_values[i]).fold(0.0, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,u,phi,region,du,residual\n");
        for i in 0..self.grid.n_points() {
            let region = match self.region[i] {
                Region::Stop => "stop",
                Region::Continue => "continue",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt17(self.grid.node(i)),
                fmt17(self.u_values[i]),
                fmt17(self.phi_values[i]),
                region,
                fmt17(self.du_values[i]),
                fmt17(self.residuals[i])
            ));
        }
        out
    }
}

pub(crate) fn interpolate(grid: &Grid1D, values: &[f64], y: f64) -> f64 {
    let dy = grid.spacing();
    let s = ((y - grid.lo()) / dy).clamp(0.0, (grid.n_points() - 1) as f64);
    let i = (s.floor() as usize).min(grid.n_points() - 2);
    let w = s - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Derivative mismatch across the free boundary on one grid.
pub fn boundary_mismatch(solution: &StoppingSolution) -> Result<f64> {
    if solution.region.iter().all(|r| *r == Region::Stop) {
        return Ok(0.0);
    }
    let b = solution.boundary_index.ok_or(Error::NoBoundary)?;
    if b == 0 || b + 2 >= solution.grid.n_points() {
        return Err(Error::NoBoundary);
    }
    Ok((solution.du_values[b + 1] - solution.reduction.phi_slope).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFitDiagnostic {
    pub spacings: Vec<f64>,
    pub mismatches: Vec<f64>,
    /// Mismatch on the finest grid.
    pub jump_in_du_at_boundary: f64,
    /// Log-log slope of mismatch against spacing; `None` when every
    /// mismatch is zero.
    pub refinement_slope: Option<f64>,
}

/// Smooth-fit diagnostic over a refinement ladder (coarsest first).
pub fn smooth_fit_diagnostic(ladder: &[StoppingSolution]) -> Result<SmoothFitDiagnostic> {
    if ladder.is_empty() {
        return Err(Error::InvalidGrid("empty refinement ladder".into()));
    }
    let spacings: Vec<f64> = ladder.iter().map(|s| s.grid.spacing()).collect();
    let mismatches = ladder.iter().map(boundary_mismatch).collect::<Result<Vec<_>>>()?;
    Ok(SmoothFitDiagnostic {
        jump_in_du_at_boundary: *mismatches.last().unwrap(),
        refinement_slope: fitted_order(&spacings, &mismatches),
        spacings,
        mismatches,
    })
}
