//! Quadratic running costs and the discounted cost functional.
//!
//! Three families ship: `G(x) = 1/2 sum w_k x_k^2`, `G(x) = 1/2 <x, h>^2` and
//! `G(x) = a |x - m|^2`. All are convex, exactly semiconcave with constant
//! equal to the top Hessian eigenvalue, and have affine directional
//! derivatives, which is what makes closed-form oracles available.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Policy, TimeGrid};
use crate::engine::{run_arms, Arm, PathFunctional};
use crate::error::{Error, Result};
use crate::numerics::SampleStats;
use crate::spectral_model::{AffineFunctional, SpectralModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostKind {
    DiagonalQuadratic { weights: Vec<f64> },
    RankOne { h: Vec<f64> },
    ShiftedQuadratic { shift: Vec<f64>, scale: f64 },
}

/// Growth and curvature constants of a running cost: `c1` bounds the
/// Hessian, and `kappa1 |x|^2 - kappa2 <= G(x) <= c_o (1 + |x|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub semiconcavity: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    kind: CostKind,
    constants: CostConstants,
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CostSpec {
    pub fn new(kind: CostKind) -> Result<Self> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let constants = match &kind {
            CostKind::DiagonalQuadratic { weights } => {
                if weights.is_empty() || !finite(weights) || weights.iter().any(|w| *w < 0.0) {
                    return Err(Error::InvalidCost("weights must be finite and nonnegative".into()));
                }
                let max = weights.iter().copied().fold(0.0, f64::max);
                let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
                CostConstants { semiconcavity: max, kappa1: 0.5 * min, kappa2: 0.0, growth: 0.5 * max }
            }
            CostKind::RankOne { h } => {
                if h.is_empty() || !finite(h) {
                    return Err(Error::InvalidCost("rank-one vector must be finite".into()));
                }
                let hh = norm_sq(h);
                CostConstants { semiconcavity: hh, kappa1: 0.0, kappa2: 0.0, growth: 0.5 * hh }
            }
            CostKind::ShiftedQuadratic { shift, scale } => {
                if shift.is_empty() || !finite(shift) || !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::InvalidCost("shifted quadratic needs a finite shift and positive scale".into()));
                }
                let mm = norm_sq(shift);
                // a|x-m|^2 >= a(|x|^2/2 - |m|^2) and <= 2a|x|^2 + 2a|m|^2
                CostConstants {
                    semiconcavity: 2.0 * scale,
                    kappa1: 0.5 * scale,
                    kappa2: scale * mm,
                    growth: 2.0 * scale * mm.max(1.0),
                }
            }
        };
        Ok(Self { kind, constants })
    }

    pub fn diagonal_quadratic(weights: Vec<f64>) -> Result<Self> {
        Self::new(CostKind::DiagonalQuadratic { weights })
    }

    pub fn rank_one(h: Vec<f64>) -> Result<Self> {
        Self::new(CostKind::RankOne { h })
    }

    pub fn shifted_quadratic(shift: Vec<f64>, scale: f64) -> Result<Self> {
        Self::new(CostKind::ShiftedQuadratic { shift, scale })
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn constants(&self) -> CostConstants {
        self.constants
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            CostKind::DiagonalQuadratic { weights } => weights.len(),
            CostKind::RankOne { h } => h.len(),
            CostKind::ShiftedQuadratic { shift, .. } => shift.len(),
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Unchecked evaluation used on hot paths.
    #[inline]
    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            CostKind::DiagonalQuadratic { weights } => 0.5 * weights.iter().zip(x).map(|(w, v)| w * v * v).sum::<f64>(),
            CostKind::RankOne { h } => {
                let p = dot(x, h);
                0.5 * p * p
            }
            CostKind::ShiftedQuadratic { shift, scale } => {
                scale * x.iter().zip(shift).map(|(v, m)| (v - m) * (v - m)).sum::<f64>()
            }
        }
    }

    pub fn eval_cost(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.value_unchecked(x))
    }

    pub fn eval_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match &self.kind {
            CostKind::DiagonalQuadratic { weights } => weights.iter().zip(x).map(|(w, v)| w * v).collect(),
            CostKind::RankOne { h } => {
                let p = dot(x, h);
                h.iter().map(|hk| p * hk).collect()
            }
            CostKind::ShiftedQuadratic { shift, scale } => {
                x.iter().zip(shift).map(|(v, m)| 2.0 * scale * (v - m)).collect()
            }
        })
    }

    /// `G_n(x) = <DG(x), n>` along the model's normalized control direction.
    pub fn eval_directional(&self, model: &SpectralModel, x: &[f64]) -> Result<f64> {
        model.check_dim(x)?;
        let grad = self.eval_gradient(x)?;
        Ok(dot(&grad, &model.direction()))
    }

    /// The directional derivative as an affine functional `<g, x> + c`.
    /// Every shipped family has one; a non-quadratic family would report
    /// [`Error::NonlinearDirectionalDerivative`] here.
    pub fn directional_affine(&self, model: &SpectralModel) -> Result<AffineFunctional> {
        if model.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: self.dim() });
        }
        let k = model.control_mode();
        let n = model.direction_norm();
        let mut slope = vec![0.0; self.dim()];
        let mut intercept = 0.0;
        match &self.kind {
            CostKind::DiagonalQuadratic { weights } => slope[k] = weights[k] * n,
            CostKind::RankOne { h } => {
                let hn = h[k] * n;
                for (s, hj) in slope.iter_mut().zip(h) {
                    *s = hj * hn;
                }
            }
            CostKind::ShiftedQuadratic { shift, scale } => {
                slope[k] = 2.0 * scale * n;
                intercept = -2.0 * scale * n * shift[k];
            }
        }
        Ok(AffineFunctional { slope, intercept })
    }

    /// Whether `G` splits as a sum of one-mode functions.
    pub fn is_separable(&self) -> bool {
        !matches!(self.kind, CostKind::RankOne { .. })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.kind).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let kind: CostKind = toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::new(kind)
    }
}

/// Monte Carlo controls shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl CostEstimate {
    pub(crate) fn from_samples(samples: &[f64], seed: u64) -> Self {
        let s = SampleStats::from_slice(samples);
        Self { mean: s.mean, std_error: s.std_error, n_paths: s.n, seed }
    }
}

/// Running cost `G` plus unit price per unit of control intensity.
pub(crate) struct DiscountedCost<'a> {
    pub cost: &'a CostSpec,
}

impl PathFunctional for DiscountedCost<'_> {
    #[inline]
    fn running(&self, x: &[f64]) -> f64 {
        self.cost.value_unchecked(x)
    }

    #[inline]
    fn jump(&self, _pre: &[f64], _post: &[f64], intensity: f64) -> f64 {
        intensity
    }
}

/// Sample mean of `sum_i e^{-rho t_i} (G dt + d nu_i)` over simulated paths:
/// the time integral uses trapezoids of `G` integrated against the exact
/// discount, each jump is charged at its own time (the jump at zero at full
/// weight) and the horizon truncates the tail.
pub fn estimate_cost_functional(
    model: &SpectralModel,
    cost: &CostSpec,
    x0: &[f64],
    policy: &dyn Policy,
    grid: &TimeGrid,
    mc: &McConfig,
) -> Result<CostEstimate> {
    model.check_dim(x0)?;
    if cost.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: cost.dim() });
    }
    let arms = [Arm { x0, policy }];
    let out = run_arms(model, &DiscountedCost { cost }, &arms, grid, mc, &[])?;
    let samples: Vec<f64> = out.iter().map(|p| p[0].total).collect();
    Ok(CostEstimate::from_samples(&samples, mc.seed))
}

/// Exact value of the cost functional under no control, from the Gaussian
/// moments `E X_k(t) = e^{lambda_k t} x_k` and
/// `Var X_k(t) = sigma_k^2 (1 - e^{2 lambda_k t}) / (2|lambda_k|)`.
pub fn closed_form_null_cost(model: &SpectralModel, cost: &CostSpec, x0: &[f64]) -> Result<f64> {
    model.check_dim(x0)?;
    if cost.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: cost.dim() });
    }
    let rho = model.discount();
    let l = model.eigenvalues();
    // int e^{-rho t} Var X_k(t) dt
    let var_int = |k: usize| {
        let s = model.noise()[k];
        (s * s / (2.0 * l[k].abs())) * (1.0 / rho - 1.0 / (rho + 2.0 * l[k].abs()))
    };
    Ok(match cost.kind() {
        CostKind::DiagonalQuadratic { weights } => (0..model.dim())
            .map(|k| 0.5 * weights[k] * (x0[k] * x0[k] / (rho + 2.0 * l[k].abs()) + var_int(k)))
            .sum(),
        CostKind::RankOne { h } => {
            let mut mean_part = 0.0;
            for j in 0..model.dim() {
                for k in 0..model.dim() {
                    mean_part += h[j] * h[k] * x0[j] * x0[k] / (rho - l[j] - l[k]);
                }
            }
            let var_part: f64 = (0..model.dim()).map(|k| h[k] * h[k] * var_int(k)).sum();
            0.5 * (mean_part + var_part)
        }
        CostKind::ShiftedQuadratic { .. } => (0..model.dim()).map(|k| mode_null_cost(model, cost, k, x0[k])).sum(),
    })
}

/// Contribution of mode `k` to the uncontrolled cost functional of a
/// separable cost.
pub fn mode_null_cost(model: &SpectralModel, cost: &CostSpec, k: usize, xk: f64) -> f64 {
    let rho = model.discount();
    let a = model.eigenvalues()[k].abs();
    let s = model.noise()[k];
    let second = xk * xk / (rho + 2.0 * a) + (s * s / (2.0 * a)) * (1.0 / rho - 1.0 / (rho + 2.0 * a));
    match cost.kind() {
        CostKind::DiagonalQuadratic { weights } => 0.5 * weights[k] * second,
        CostKind::ShiftedQuadratic { shift, scale } => {
            let m = shift[k];
            scale * (second - 2.0 * m * xk / (rho + a) + m * m / rho)
        }
        CostKind::RankOne { .. } => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoAction;
    use crate::spectral_model::build_diagonal_model;

    fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        // adaptive Simpson
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        }
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let l = simpson(f, a, m);
            let r = simpson(f, m, b);
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                return l + r + (l + r - whole) / 15.0;
            }
            rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
        }
        rec(f, a, b, simpson(f, a, b), tol, depth)
    }

    #[test]
    fn evaluation_examples() {
        let c = CostSpec::diagonal_quadratic(vec![1.0, 1.0]).unwrap();
        assert_eq!(c.eval_cost(&[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(c.eval_gradient(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);

        let m = build_diagonal_model(&[-1.0, -2.0], &[1.0, 1.0], &[1.0, 1.0], 0, 0.5).unwrap();
        let r = CostSpec::rank_one(vec![1.0, 0.0]).unwrap();
        assert_eq!(r.eval_directional(&m, &[2.0, 5.0]).unwrap(), 2.0);

        let s = CostSpec::shifted_quadratic(vec![0.3, -1.2], 2.0).unwrap();
        assert_eq!(s.eval_cost(&[0.3, -1.2]).unwrap(), 0.0);
        assert_eq!(s.eval_gradient(&[0.3, -1.2]).unwrap(), vec![0.0, 0.0]);
        assert!(c.eval_cost(&[1.0]).is_err());
    }

    #[test]
    fn directional_affine_matches_gradient() {
        let m = build_diagonal_model(&[-1.0, -2.0, -3.0], &[1.0; 3], &[2.0, 1.0, 1.0], 0, 0.5).unwrap();
        let x = [0.7, -1.3, 2.1];
        for c in [
            CostSpec::diagonal_quadratic(vec![1.0, 2.0, 3.0]).unwrap(),
            CostSpec::rank_one(vec![0.5, -1.0, 2.0]).unwrap(),
            CostSpec::shifted_quadratic(vec![0.2, 0.1, -0.4], 1.5).unwrap(),
        ] {
            let g = c.directional_affine(&m).unwrap();
            let direct = c.eval_directional(&m, &x).unwrap();
            assert!((g.eval(&x) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn growth_sandwich_holds_on_samples() {
        let costs = [
            CostSpec::diagonal_quadratic(vec![1.0, 0.5]).unwrap(),
            CostSpec::rank_one(vec![1.0, 1.0]).unwrap(),
            CostSpec::shifted_quadratic(vec![0.5, -2.0], 0.7).unwrap(),
        ];
        let mut state = 0x1234_5678u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 20.0 - 10.0
        };
        for c in &costs {
            let k = c.constants();
            for _ in 0..500 {
                let x = [next(), next()];
                let g = c.eval_cost(&x).unwrap();
                let xx = norm_sq(&x);
                assert!(g >= k.kappa1 * xx - k.kappa2 - 1e-12);
                assert!(g <= k.growth * (1.0 + xx) + 1e-12);
            }
        }
    }

    #[test]
    fn null_cost_examples_against_quadrature() {
        let m = build_diagonal_model(&[-1.0], &[0.0], &[1.0], 0, 1.0).unwrap();
        let c = CostSpec::diagonal_quadratic(vec![1.0]).unwrap();
        let exact = closed_form_null_cost(&m, &c, &[1.0]).unwrap();
        let oracle = quad(&|t| (-t).exp() * 0.5 * (-2.0 * t).exp(), 0.0, 60.0, 1e-13, 40);
        assert!((exact - oracle).abs() < 1e-10);
        assert!((exact - 1.0 / 6.0).abs() < 1e-15);

        let m = build_diagonal_model(&[-1.0], &[2f64.sqrt()], &[1.0], 0, 1.0).unwrap();
        let exact = closed_form_null_cost(&m, &c, &[0.0]).unwrap();
        let oracle = quad(&|t| (-t).exp() * 0.5 * (1.0 - (-2.0 * t).exp()), 0.0, 60.0, 1e-13, 40);
        assert!((exact - oracle).abs() < 1e-10);
        assert!((exact - 1.0 / 3.0).abs() < 1e-15);

        let m = build_diagonal_model(&[-1.0], &[0.0], &[1.0], 0, 1.0).unwrap();
        assert_eq!(closed_form_null_cost(&m, &c, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn shifted_and_rank_one_null_costs_against_quadrature() {
        let m = build_diagonal_model(&[-1.0, -3.0], &[0.8, 0.4], &[1.0, 1.0], 0, 0.5).unwrap();
        let x0 = [0.6, -0.9];
        let l = m.eigenvalues().to_vec();
        let s = m.noise().to_vec();
        let mean = |k: usize, t: f64| (l[k] * t).exp() * x0[k];
        let var = |k: usize, t: f64| s[k] * s[k] * (1.0 - (2.0 * l[k] * t).exp()) / (2.0 * l[k].abs());

        let shift = [0.3, -0.2];
        let c = CostSpec::shifted_quadratic(shift.to_vec(), 1.7).unwrap();
        let f = |t: f64| {
            (-0.5 * t).exp()
                * 1.7
                * (0..2).map(|k| (mean(k, t) - shift[k]).powi(2) + var(k, t)).sum::<f64>()
        };
        let oracle = quad(&f, 0.0, 120.0, 1e-12, 40);
        assert!((closed_form_null_cost(&m, &c, &x0).unwrap() - oracle).abs() < 1e-8);

        let h = [1.0, 0.5];
        let c = CostSpec::rank_one(h.to_vec()).unwrap();
        let f = |t: f64| {
            let mu: f64 = (0..2).map(|k| h[k] * mean(k, t)).sum();
            let v: f64 = (0..2).map(|k| h[k] * h[k] * var(k, t)).sum();
            (-0.5 * t).exp() * 0.5 * (mu * mu + v)
        };
        let oracle = quad(&f, 0.0, 120.0, 1e-12, 40);
        assert!((closed_form_null_cost(&m, &c, &x0).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn zero_cost_zero_policy_is_exactly_zero() {
        let m = build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap();
        let c = CostSpec::diagonal_quadratic(vec![0.0]).unwrap();
        let grid = TimeGrid::new(5.0, 500).unwrap();
        let est = estimate_cost_functional(&m, &c, &[1.0], &NoAction, &grid, &McConfig::new(200, 1)).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn deterministic_null_cost_converges_at_second_order() {
        let m = build_diagonal_model(&[-1.0], &[0.0], &[1.0], 0, 1.0).unwrap();
        let c = CostSpec::diagonal_quadratic(vec![1.0]).unwrap();
        let exact = closed_form_null_cost(&m, &c, &[1.0]).unwrap();
        let steps = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&h| {
                let grid = TimeGrid::with_step(40.0, h).unwrap();
                let est = estimate_cost_functional(&m, &c, &[1.0], &NoAction, &grid, &McConfig::new(1, 0)).unwrap();
                (est.mean - exact).abs()
            })
            .collect();
        let order = crate::numerics::fitted_order(&steps, &errs).unwrap();
        assert!(order >= 1.0, "order {order}, errors {errs:?}");
        // at h = 1e-3 the discretization error is far below the acceptance tolerance
        let grid = TimeGrid::with_step(40.0, 1e-3).unwrap();
        let est = estimate_cost_functional(&m, &c, &[1.0], &NoAction, &grid, &McConfig::new(1, 0)).unwrap();
        assert!((est.mean - 1.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn cost_toml_round_trip() {
        let c = CostSpec::shifted_quadratic(vec![0.1, 1.0 / 3.0], 0.7).unwrap();
        let back = CostSpec::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
