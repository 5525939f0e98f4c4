//! The energy-market and climate applications as spectral models on the
//! Neumann cosine basis `{1, sqrt(2) cos(k pi xi)}` of the unit interval.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::spectral_model::{build_diagonal_model, SpectralModel};

/// A built application: model, cost and the starting state in coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AppInstance {
    pub model: SpectralModel,
    pub cost: CostSpec,
    pub x0: Vec<f64>,
    /// The semigroup is positivity preserving by construction (heat flow
    /// minus a nonnegative scalar); recorded, not checked.
    pub positivity_preserving: bool,
}

/// Neumann Laplacian eigenvalues `(k pi)^2` on the unit interval.
fn neumann_spectrum(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 * PI).powi(2)).collect()
}

/// Pointwise lower bound of `q(xi) = q_0 + sum_k q_k sqrt(2) cos(k pi xi)`.
fn price_lower_bound(q: &[f64]) -> f64 {
    q[0] - std::f64::consts::SQRT_2 * q[1..].iter().map(|c| c.abs()).sum::<f64>()
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidParams(format!("{name} has {} coefficients, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParams(format!("{name} has non-finite coefficients")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub depreciation: f64,
    pub demand_reversion: f64,
    pub n_modes: usize,
    pub noise: Vec<f64>,
    pub price: Vec<f64>,
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub surplus_scale: f64,
    pub discount: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            depreciation: 0.3,
            demand_reversion: 0.5,
            n_modes: 4,
            noise: vec![0.8, 0.5, 0.3, 0.2],
            price: vec![1.0, 0.0, 0.0, 0.0],
            supply: vec![1.0, 0.3, 0.1, 0.0],
            demand: vec![1.2, 0.1, 0.0, 0.05],
            surplus_scale: 1.0,
            discount: 0.4,
        }
    }
}

/// `lambda_k = -(k pi)^2 - depreciation - demand_reversion`, control on the
/// constant mode, cost `a |x|^2` in the supply-minus-demand state.
pub fn build_energy_model(params: &EnergyParams) -> Result<AppInstance> {
    let n = params.n_modes;
    if n == 0 {
        return Err(Error::InvalidParams("need at least one mode".into()));
    }
    if !(params.depreciation > 0.0) {
        return Err(Error::InvalidParams(format!("depreciation must be positive, got {}", params.depreciation)));
    }
    if !(params.demand_reversion >= 0.0) {
        return Err(Error::InvalidParams(format!("demand reversion must be nonnegative, got {}", params.demand_reversion)));
    }
    if !(params.surplus_scale > 0.0) {
        return Err(Error::InvalidParams(format!("surplus scale must be positive, got {}", params.surplus_scale)));
    }
    for (name, v) in [("noise", &params.noise), ("price", &params.price), ("supply", &params.supply), ("demand", &params.demand)] {
        check_len(name, v, n)?;
    }
    let floor = price_lower_bound(&params.price);
    if !(floor > 0.0) {
        return Err(Error::InvalidParams(format!("price field is not bounded away from zero (bound {floor})")));
    }
    let shift = params.depreciation + params.demand_reversion;
    let eigenvalues: Vec<f64> = neumann_spectrum(n).iter().map(|m| -m - shift).collect();
    let model = build_diagonal_model(&eigenvalues, &params.noise, &params.price, 0, params.discount)
        .map_err(|e| Error::InvalidParams(e.to_string()))?
        .with_price_floor(floor)?;
    let cost = CostSpec::shifted_quadratic(vec![0.0; n], params.surplus_scale)?;
    let x0 = params.supply.iter().zip(&params.demand).map(|(e, a)| e - a).collect();
    Ok(AppInstance { model, cost, x0, positivity_preserving: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateParams {
    pub outgoing_radiation: f64,
    pub diffusion: f64,
    /// Spectrum scale of the affine map from `[-1, 1]` to the unit interval.
    pub domain_factor: f64,
    pub n_modes: usize,
    pub noise: Vec<f64>,
    pub carbon_price: f64,
    pub equilibrium: Vec<f64>,
    pub target: Vec<f64>,
    pub scale: f64,
    /// Initial temperature anomaly relative to the equilibrium.
    pub initial: Vec<f64>,
    pub discount: f64,
}

impl Default for ClimateParams {
    fn default() -> Self {
        Self {
            outgoing_radiation: 1.2,
            diffusion: 1.0,
            domain_factor: 0.25,
            n_modes: 4,
            noise: vec![0.6, 0.3, 0.2, 0.1],
            carbon_price: 2.0,
            equilibrium: vec![0.0; 4],
            target: vec![0.1, 0.0, 0.0, 0.0],
            scale: 1.0,
            initial: vec![0.3, 0.1, 0.0, 0.0],
            discount: 0.6,
        }
    }
}

/// `lambda_k = -eta - D (k pi)^2 * domain_factor`, control along the
/// constant function, cost `a |x - (T_hat - T_star)|^2`.
pub fn build_climate_model(params: &ClimateParams) -> Result<AppInstance> {
    let n = params.n_modes;
    if n == 0 {
        return Err(Error::InvalidParams("need at least one mode".into()));
    }
    if !(params.outgoing_radiation > 0.0) {
        return Err(Error::InvalidParams(format!("outgoing radiation slope must be positive, got {}", params.outgoing_radiation)));
    }
    if !(params.diffusion >= 0.0 && params.domain_factor > 0.0) {
        return Err(Error::InvalidParams("diffusion must be nonnegative and the domain factor positive".into()));
    }
    if !(params.carbon_price > 0.0) {
        return Err(Error::InvalidParams(format!("carbon price must be positive, got {}", params.carbon_price)));
    }
    if !(params.scale > 0.0) {
        return Err(Error::InvalidParams(format!("cost scale must be positive, got {}", params.scale)));
    }
    for (name, v) in [
        ("noise", &params.noise),
        ("equilibrium", &params.equilibrium),
        ("target", &params.target),
        ("initial", &params.initial),
    ] {
        check_len(name, v, n)?;
    }
    let eigenvalues: Vec<f64> = neumann_spectrum(n)
        .iter()
        .map(|m| -params.outgoing_radiation - params.diffusion * m * params.domain_factor)
        .collect();
    let mut price = vec![0.0; n];
    price[0] = params.carbon_price;
    let model = build_diagonal_model(&eigenvalues, &params.noise, &price, 0, params.discount)
        .map_err(|e| Error::InvalidParams(e.to_string()))?
        .with_price_floor(params.carbon_price)?;
    let shift = params.target.iter().zip(&params.equilibrium).map(|(t, s)| t - s).collect();
    let cost = CostSpec::shifted_quadratic(shift, params.scale)?;
    Ok(AppInstance { model, cost, x0: params.initial.clone(), positivity_preserving: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostKind;

    #[test]
    fn energy_spectrum_examples() {
        let p = EnergyParams {
            depreciation: 0.5,
            demand_reversion: 0.0,
            n_modes: 3,
            noise: vec![1.0; 3],
            price: vec![1.0, 0.0, 0.0],
            supply: vec![0.0; 3],
            demand: vec![0.0; 3],
            ..EnergyParams::default()
        };
        let app = build_energy_model(&p).unwrap();
        let l = app.model.eigenvalues();
        assert_eq!(l[0], -0.5);
        assert!((l[1] - (-0.5 - PI * PI)).abs() < 1e-12);
        assert!((l[2] - (-0.5 - 4.0 * PI * PI)).abs() < 1e-12);

        let shifted = build_energy_model(&EnergyParams { demand_reversion: 0.5, ..p.clone() }).unwrap();
        for (a, b) in shifted.model.eigenvalues().iter().zip(l) {
            assert!((a - (b - 0.5)).abs() < 1e-12);
        }

        let priced = build_energy_model(&EnergyParams { price: vec![4.0, 0.0, 0.0], ..p }).unwrap();
        assert_eq!(priced.model.direction(), vec![0.25, 0.0, 0.0]);
        assert_eq!(priced.model.price_floor(), 4.0);
    }

    #[test]
    fn energy_rejects_bad_params() {
        let bad = EnergyParams { depreciation: 0.0, ..EnergyParams::default() };
        assert!(matches!(build_energy_model(&bad), Err(Error::InvalidParams(_))));
        let bad = EnergyParams { price: vec![1.0, 1.0, 0.0, 0.0], ..EnergyParams::default() };
        assert!(matches!(build_energy_model(&bad), Err(Error::InvalidParams(_))));
        let bad = EnergyParams { noise: vec![1.0], ..EnergyParams::default() };
        assert!(matches!(build_energy_model(&bad), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn climate_examples() {
        let p = ClimateParams {
            outgoing_radiation: 1.0,
            domain_factor: 1.0,
            target: vec![0.0; 4],
            ..ClimateParams::default()
        };
        let app = build_climate_model(&p).unwrap();
        let l = app.model.eigenvalues();
        assert_eq!(l[0], -1.0);
        assert!((l[1] - (-1.0 - PI * PI)).abs() < 1e-12);
        assert_eq!(app.model.control_mode(), 0);
        assert_eq!(app.model.control_eigenvalue(), -1.0);
        assert_eq!(app.model.direction(), vec![0.5, 0.0, 0.0, 0.0]);
        match app.cost.kind() {
            CostKind::ShiftedQuadratic { shift, .. } => assert!(shift.iter().all(|m| *m == 0.0)),
            k => panic!("unexpected cost {k:?}"),
        }
        assert_eq!(app.cost.eval_cost(&[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn builders_satisfy_model_invariants() {
        for app in [build_energy_model(&EnergyParams::default()).unwrap(), build_climate_model(&ClimateParams::default()).unwrap()] {
            let m = &app.model;
            assert!(m.eigenvalues().iter().all(|l| *l <= -m.dissipativity()));
            let qn: f64 = m.price().iter().zip(m.direction()).map(|(q, n)| q * n).sum();
            assert!((qn - 1.0).abs() < 1e-15);
            assert!(m.price_floor() > 0.0);
            assert!(app.positivity_preserving);
        }
    }
}
