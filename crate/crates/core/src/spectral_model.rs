//! Finite spectral truncation of the controlled Ornstein-Uhlenbeck environment.
//!
//! The generator is diagonal in its eigenbasis: mode `k` decays at rate
//! `-eigenvalues[k]` and is driven by independent noise of intensity
//! `noise[k]`. The control acts along a single eigenvector, the "control
//! direction", rescaled so that one unit of intensity costs one unit of price.
//! Mode indices are zero-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};

/// Diagonal operator, noise, discount, price and control direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    eigenvalues: Vec<f64>,
    noise: Vec<f64>,
    discount: f64,
    price: Vec<f64>,
    price_floor: f64,
    control_mode: usize,
    direction_norm: f64,
    dissipativity: f64,
}

/// Affine functional `x -> <slope, x> + intercept` on the truncated space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFunctional {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl AffineFunctional {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.slope.iter().zip(x).map(|(g, v)| g * v).sum::<f64>() + self.intercept
    }

    /// Euclidean norm of the slope, the Lipschitz constant of the functional.
    pub fn slope_norm(&self) -> f64 {
        self.slope.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Builds a diagonal model and normalizes the control direction so that
/// `<price, direction> = 1`.
pub fn build_diagonal_model(
    eigenvalues: &[f64],
    noise_coeffs: &[f64],
    price_coeffs: &[f64],
    control_mode: usize,
    discount: f64,
) -> Result<SpectralModel> {
    let n = eigenvalues.len();
    if n == 0 {
        return Err(Error::InvalidModel("model needs at least one mode".into()));
    }
    if noise_coeffs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: noise_coeffs.len() });
    }
    if price_coeffs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: price_coeffs.len() });
    }
    if control_mode >= n {
        return Err(Error::InvalidModel(format!("control mode {control_mode} out of range for {n} modes")));
    }
    for (k, &l) in eigenvalues.iter().enumerate() {
        if !l.is_finite() || l >= 0.0 {
            return Err(Error::NonDissipative { mode: k, value: l });
        }
    }
    if !discount.is_finite() || discount <= 0.0 {
        return Err(Error::InvalidDiscount(discount));
    }
    if let Some(s) = noise_coeffs.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::InvalidModel(format!("noise coefficients must be finite and nonnegative, got {s}")));
    }
    if price_coeffs.iter().any(|q| !q.is_finite()) {
        return Err(Error::InvalidModel("price coefficients must be finite".into()));
    }
    let q_dir = price_coeffs[control_mode];
    if q_dir == 0.0 {
        return Err(Error::ZeroPriceOnDirection { mode: control_mode });
    }
    if q_dir < 0.0 {
        return Err(Error::NegativePriceOnDirection { mode: control_mode, value: q_dir });
    }
    let dissipativity = -eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let price_floor = price_coeffs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SpectralModel {
        eigenvalues: eigenvalues.to_vec(),
        noise: noise_coeffs.to_vec(),
        discount,
        price: price_coeffs.to_vec(),
        price_floor,
        control_mode,
        direction_norm: 1.0 / q_dir,
        dissipativity,
    })
}

impl SpectralModel {
    /// Overrides the price floor with a bound certified outside the
    /// coefficient representation (e.g. a pointwise bound on a price field).
    pub fn with_price_floor(mut self, floor: f64) -> Result<Self> {
        if !floor.is_finite() {
            return Err(Error::InvalidModel("price floor must be finite".into()));
        }
        self.price_floor = floor;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn price(&self) -> &[f64] {
        &self.price
    }

    pub fn price_floor(&self) -> f64 {
        self.price_floor
    }

    pub fn control_mode(&self) -> usize {
        self.control_mode
    }

    /// Length of the normalized control direction.
    pub fn direction_norm(&self) -> f64 {
        self.direction_norm
    }

    /// Eigenvalue carried by the control direction.
    pub fn control_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.control_mode]
    }

    pub fn dissipativity(&self) -> f64 {
        self.dissipativity
    }

    /// The normalized control direction as a coefficient vector.
    pub fn direction(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.dim()];
        n[self.control_mode] = self.direction_norm;
        n
    }

    /// Discount rate of the associated stopping problem, `rho - lambda`.
    pub fn stopping_rate(&self) -> f64 {
        self.discount - self.control_eigenvalue()
    }

    /// Squared Hilbert-Schmidt norm of the noise.
    pub fn hilbert_schmidt_sq(&self) -> f64 {
        self.noise.iter().map(|s| s * s).sum()
    }

    /// Uniform bound on the second moment of the stochastic convolution,
    /// `sum_k sigma_k^2 / (2 |lambda_k|)`.
    pub fn noise_moment_bound(&self) -> f64 {
        self.eigenvalues.iter().zip(&self.noise).map(|(l, s)| s * s / (2.0 * l.abs())).sum()
    }

    /// Stationary standard deviation of mode `k`.
    pub fn stationary_std(&self, k: usize) -> f64 {
        self.noise[k] / (2.0 * self.eigenvalues[k].abs()).sqrt()
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            eigenvalues: self.eigenvalues.clone(),
            noise: self.noise.clone(),
            price: self.price.clone(),
            control_mode: self.control_mode,
            discount: self.discount,
            price_floor: Some(self.price_floor),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let model = build_diagonal_model(&doc.eigenvalues, &doc.noise, &doc.price, doc.control_mode, doc.discount)?;
        match doc.price_floor {
            Some(f) => model.with_price_floor(f),
            None => Ok(model),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_document()).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ModelDocument = toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// Structured-text form of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub eigenvalues: Vec<f64>,
    pub noise: Vec<f64>,
    pub price: Vec<f64>,
    pub control_mode: usize,
    pub discount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_floor: Option<f64>,
}

/// `1 / (rho - lambda - lambda_k)`: the time integral of
/// `e^{-(rho - lambda) t} e^{lambda_k t}` over the half line.
pub fn resolvent_weight(model: &SpectralModel, k: usize) -> f64 {
    1.0 / (model.stopping_rate() - model.eigenvalues[k])
}

/// Closed form of the stopping payoff
/// `Phi(x) = -E int_0^inf e^{-(rho-lambda)t} (G_n(X_t) + rho - lambda) dt`
/// for an affine directional derivative `G_n(x) = <g, x> + c`:
/// `Phi(x) = -sum_k g_k x_k / (rho - lambda - lambda_k) - (c + rho - lambda)/(rho - lambda)`.
pub fn phi_closed_form(model: &SpectralModel, cost: &CostSpec) -> Result<AffineFunctional> {
    let g = cost.directional_affine(model)?;
    let r = model.stopping_rate();
    let slope = g.slope.iter().enumerate().map(|(k, gk)| -gk * resolvent_weight(model, k)).collect();
    Ok(AffineFunctional { slope, intercept: -(g.intercept + r) / r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_mode_identity_normalization() {
        let m = build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap();
        assert_eq!(m.dissipativity(), 1.0);
        assert_eq!(m.direction(), vec![1.0]);
        assert_eq!(m.control_eigenvalue(), -1.0);
    }

    #[test]
    fn direction_rescaled_by_price() {
        let m = build_diagonal_model(&[-1.0, -4.0], &[1.0, 1.0], &[2.0, 1.0], 0, 0.5).unwrap();
        assert_eq!(m.direction(), vec![0.5, 0.0]);
        assert_eq!(m.direction_norm(), 0.5);
        let qn: f64 = m.price().iter().zip(m.direction()).map(|(q, n)| q * n).sum();
        assert_eq!(qn, 1.0);
    }

    #[test]
    fn constructor_errors() {
        assert!(matches!(
            build_diagonal_model(&[-1.0, 0.5], &[1.0, 1.0], &[1.0, 1.0], 0, 0.5),
            Err(Error::NonDissipative { mode: 1, .. })
        ));
        assert!(matches!(
            build_diagonal_model(&[-1.0, -2.0], &[1.0, 1.0], &[0.0, 1.0], 0, 0.5),
            Err(Error::ZeroPriceOnDirection { mode: 0 })
        ));
        assert!(matches!(build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.0), Err(Error::InvalidDiscount(_))));
        assert!(build_diagonal_model(&[-1.0], &[-1.0], &[1.0], 0, 1.0).is_err());
    }

    #[test]
    fn resolvent_weight_examples() {
        let m = build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap();
        assert!((resolvent_weight(&m, 0) - 0.4).abs() < 1e-15);
        let m = build_diagonal_model(&[-2.0, -3.0], &[1.0, 1.0], &[1.0, 1.0], 0, 1.0).unwrap();
        assert!((resolvent_weight(&m, 1) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn phi_examples() {
        let m = build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap();
        let phi = phi_closed_form(&m, &CostSpec::diagonal_quadratic(vec![1.0]).unwrap()).unwrap();
        assert!((phi.slope[0] + 0.4).abs() < 1e-15);
        assert!((phi.intercept + 1.0).abs() < 1e-15);
        assert!((phi.eval(&[1.0]) + 1.4).abs() < 1e-14);
        let zero = phi_closed_form(&m, &CostSpec::diagonal_quadratic(vec![0.0]).unwrap()).unwrap();
        assert_eq!(zero.eval(&[3.0]), -1.0);
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let m = build_diagonal_model(&[-0.1f64.exp(), -std::f64::consts::PI], &[1.0 / 3.0, 0.7], &[1.0, 0.3], 1, 0.1 + 0.2)
            .unwrap();
        let text = m.to_toml().unwrap();
        let back = SpectralModel::from_toml(&text).unwrap();
        assert_eq!(m, back);
    }

    fn model_strategy() -> impl Strategy<Value = SpectralModel> {
        (1usize..5).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0..-0.05f64, n),
                prop::collection::vec(0.0..2.0f64, n),
                prop::collection::vec(0.1..3.0f64, n),
                0..n,
                0.05..2.0f64,
            )
                .prop_map(|(l, s, q, k, rho)| build_diagonal_model(&l, &s, &q, k, rho).unwrap())
        })
    }

    proptest! {
        #[test]
        fn resolvent_weight_is_in_open_unit_over_rho(m in model_strategy()) {
            for k in 0..m.dim() {
                let w = resolvent_weight(&m, k);
                prop_assert!(w > 0.0 && w < 1.0 / m.discount());
            }
        }

        #[test]
        fn rebuilding_a_normalized_model_is_identity(m in model_strategy()) {
            let again = build_diagonal_model(m.eigenvalues(), m.noise(), m.price(), m.control_mode(), m.discount()).unwrap();
            prop_assert_eq!(again, m);
        }

        #[test]
        fn phi_is_lipschitz(m in model_strategy(), pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 200)) {
            let weights: Vec<f64> = (0..m.dim()).map(|k| 0.5 + k as f64).collect();
            let cost = CostSpec::diagonal_quadratic(weights).unwrap();
            let phi = phi_closed_form(&m, &cost).unwrap();
            let k_g = cost.directional_affine(&m).unwrap().slope_norm();
            let lip = k_g / (m.stopping_rate() + m.dissipativity());
            for pair in pts.chunks(2).take(100) {
                let a = &pair[0][..m.dim()];
                let b = &pair[1][..m.dim()];
                let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                prop_assert!((phi.eval(a) - phi.eval(b)).abs() <= lip * dist * (1.0 + 1e-12) + 1e-14);
            }
        }
    }
}
