//! Named model and cost configurations.

use crate::apps::{build_climate_model, build_energy_model, ClimateParams, EnergyParams};
use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::spectral_model::{build_diagonal_model, SpectralModel};

pub const PRESET_NAMES: [&str; 5] = ["bench1d", "bench2d", "zero", "energy", "climate"];

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub model: SpectralModel,
    pub cost: CostSpec,
    /// Default starting state.
    pub x0: Vec<f64>,
}

/// One mode, `lambda = -1`, `sigma = 1`, `rho = 0.5`, `G = x^2 / 2`, `q = 1`.
pub fn bench1d() -> Preset {
    Preset {
        name: "bench1d".into(),
        model: build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).expect("valid preset"),
        cost: CostSpec::diagonal_quadratic(vec![1.0]).expect("valid preset"),
        x0: vec![1.0],
    }
}

/// Two modes with a shared eigenvalue and the rank-one cost
/// `G = <x, h>^2 / 2`, `h = (1, 1) / sqrt 2`, controlled on the first mode.
pub fn bench2d() -> Preset {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Preset {
        name: "bench2d".into(),
        model: build_diagonal_model(&[-1.0, -1.0], &[1.0, 0.7], &[1.0, 1.0], 0, 0.5).expect("valid preset"),
        cost: CostSpec::rank_one(vec![h, h]).expect("valid preset"),
        x0: vec![1.0, 0.0],
    }
}

/// No noise, no running cost, started at rest.
pub fn zero() -> Preset {
    Preset {
        name: "zero".into(),
        model: build_diagonal_model(&[-1.0], &[0.0], &[1.0], 0, 0.5).expect("valid preset"),
        cost: CostSpec::diagonal_quadratic(vec![0.0]).expect("valid preset"),
        x0: vec![0.0],
    }
}

pub fn energy(params: &EnergyParams) -> Result<Preset> {
    let app = build_energy_model(params)?;
    Ok(Preset { name: "energy".into(), model: app.model, cost: app.cost, x0: app.x0 })
}

pub fn climate(params: &ClimateParams) -> Result<Preset> {
    let app = build_climate_model(params)?;
    Ok(Preset { name: "climate".into(), model: app.model, cost: app.cost, x0: app.x0 })
}

/// Looks up a preset by name, using default application parameters.
pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "bench1d" => Ok(bench1d()),
        "bench2d" => Ok(bench2d()),
        "zero" => Ok(zero()),
        "energy" => energy(&EnergyParams::default()),
        "climate" => climate(&ClimateParams::default()),
        other => Err(Error::InvalidParams(format!("unknown preset '{other}' (known: {})", PRESET_NAMES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_model::phi_closed_form;

    #[test]
    fn every_named_preset_builds() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            assert_eq!(p.model.dim(), p.cost.dim());
            assert_eq!(p.x0.len(), p.model.dim());
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn bench_payoffs() {
        let phi = phi_closed_form(&bench1d().model, &bench1d().cost).unwrap();
        assert!((phi.slope[0] + 0.4).abs() < 1e-15);
        assert!((phi.intercept + 1.0).abs() < 1e-15);
        let b = bench2d();
        let phi = phi_closed_form(&b.model, &b.cost).unwrap();
        assert!((phi.slope[0] + 0.2).abs() < 1e-15 && (phi.slope[1] + 0.2).abs() < 1e-15);
    }
}
