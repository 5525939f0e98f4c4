//! Finite-difference obstacle solver on the reduced coordinate.

use serde::{Deserialize, Serialize};

use super::{Grid1D, Reduction, Region, StoppingSolution};
use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::spectral_model::SpectralModel;

/// Whether the obstacle constraint `u >= Phi` is imposed. `Disabled` is a
/// deliberately broken solver kept as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleMode {
    Enforced,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    pub omega: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Nodes with `u - Phi` at or below this are classified as stopping.
    pub region_tolerance: f64,
    pub obstacle: ObstacleMode,
    /// Finish the PSOR iterate with exact policy iteration.
    pub polish: bool,
}

impl Default for FdSettings {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tolerance: 1e-10,
            max_iterations: 100_000,
            region_tolerance: 1e-10,
            obstacle: ObstacleMode::Enforced,
            polish: true,
        }
    }
}

struct Stencil {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Stencil {
    fn new(red: &Reduction, y: &[f64], dy: f64) -> Self {
        let s2 = red.noise * red.noise;
        let diff = 0.5 * s2 / (dy * dy);
        let lower = y.iter().map(|y| red.eigenvalue * y / (2.0 * dy) - diff).collect();
        let upper = y.iter().map(|y| -red.eigenvalue * y / (2.0 * dy) - diff).collect();
        let diag = vec![red.rate + 2.0 * diff; y.len()];
        Self { lower, diag, upper }
    }

    fn apply(&self, u: &[f64], i: usize) -> f64 {
        self.lower[i] * u[i - 1] + self.diag[i] * u[i] + self.upper[i] * u[i + 1]
    }
}

/// Solves the tridiagonal system with PDE rows where `pde[i]` and `u_i = phi_i`
/// elsewhere; the two end values are fixed.
fn solve_rows(st: &Stencil, phi: &[f64], pde: &[bool], u: &mut [f64]) {
    let n = u.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    // row 0: u_0 fixed
    c[0] = 0.0;
    d[0] = u[0];
    for i in 1..n - 1 {
        let (a, b, cc, rhs) = if pde[i] { (st.lower[i], st.diag[i], st.upper[i], 0.0) } else { (0.0, 1.0, 0.0, phi[i]) };
        let m = b - a * c[i - 1];
        c[i] = cc / m;
        d[i] = (rhs - a * d[i - 1]) / m;
    }
    for i in (1..n - 1).rev() {
        u[i] = d[i] - c[i] * u[i + 1];
    }
}

pub fn solve_vi_fd(model: &SpectralModel, cost: &CostSpec, grid: &Grid1D) -> Result<StoppingSolution> {
    solve_vi_fd_with(model, cost, grid, &FdSettings::default())
}

/// Projected SOR on `min{(rho - lambda) u - lambda y u' - s^2 u'' / 2, u - Phi} = 0`
/// with central differences and `u = max(Phi, 0)` at both ends.
pub fn solve_vi_fd_with(model: &SpectralModel, cost: &CostSpec, grid: &Grid1D, settings: &FdSettings) -> Result<StoppingSolution> {
    let red = Reduction::new(model, cost)?;
    if red.noise == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let n = grid.n_points();
    let dy = grid.spacing();
    let y = grid.nodes();
    let phi: Vec<f64> = y.iter().map(|y| red.phi(*y)).collect();
    let st = Stencil::new(&red, &y, dy);
    let enforce = settings.obstacle == ObstacleMode::Enforced;

    let mut u: Vec<f64> = phi.iter().map(|p| p.max(0.0)).collect();
    let mut iterations = 0;
    loop {
        if iterations >= settings.max_iterations {
            // policy iteration converges from any start, so it can take over
            if settings.polish {
                break;
            }
            let mut last = 0.0f64;
            for i in 1..n - 1 {
                last = last.max((st.apply(&u, i) / st.diag[i]).abs());
            }
            return Err(Error::NoConvergence { iterations, last_update: last });
        }
        iterations += 1;
        let mut max_update = 0.0f64;
        for i in 1..n - 1 {
            let gs = -(st.lower[i] * u[i - 1] + st.upper[i] * u[i + 1]) / st.diag[i];
            let mut v = u[i] + settings.omega * (gs - u[i]);
            if enforce {
                v = v.max(phi[i]);
            }
            max_update = max_update.max((v - u[i]).abs());
            u[i] = v;
        }
        if max_update < settings.tolerance {
            break;
        }
    }

    if settings.polish {
        let mut pde = vec![true; n];
        let mut settled = false;
        for _ in 0..n.max(100) {
            let next: Vec<bool> = (0..n)
                .map(|i| i == 0 || i == n - 1 || !enforce || st.apply(&u, i) < u[i] - phi[i])
                .collect();
            let mut trial = u.clone();
            solve_rows(&st, &phi, &next, &mut trial);
            let changed = next != pde;
            pde = next;
            u = trial;
            if !changed {
                settled = true;
                break;
            }
        }
        if !settled {
            return Err(Error::NoConvergence { iterations, last_update: f64::NAN });
        }
    }

    let region: Vec<Region> =
        (0..n).map(|i| if u[i] - phi[i] <= settings.region_tolerance { Region::Stop } else { Region::Continue }).collect();
    let boundary_index = (0..n - 1).find(|&i| region[i] == Region::Stop && region[i + 1] == Region::Continue);
    let mut du = vec![0.0; n];
    du[0] = (u[1] - u[0]) / dy;
    du[n - 1] = (u[n - 1] - u[n - 2]) / dy;
    for i in 1..n - 1 {
        du[i] = (u[i + 1] - u[i - 1]) / (2.0 * dy);
    }
    let mut operator_values = vec![0.0; n];
    let mut residuals = vec![0.0; n];
    for i in 1..n - 1 {
        operator_values[i] = st.apply(&u, i);
        residuals[i] = operator_values[i].min(u[i] - phi[i]);
    }
    residuals[0] = u[0] - phi[0].max(0.0);
    residuals[n - 1] = u[n - 1] - phi[n - 1].max(0.0);

    Ok(StoppingSolution {
        grid: *grid,
        reduction: red,
        boundary: boundary_index.map(|i| y[i]),
        boundary_index,
        u_values: u,
        phi_values: phi,
        region,
        du_values: du,
        residuals,
        operator_values,
        iterations,
        obstacle: settings.obstacle,
    })
}
