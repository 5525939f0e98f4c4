//! Reflection policies, value estimates, threshold sweeps and
//! finite-difference directional derivatives of the control value.

use serde::{Deserialize, Serialize};

use crate::costs::{CostSpec, DiscountedCost, McConfig};
use crate::dynamics::{Policy, TimeGrid};
use crate::engine::{run_arms, Arm};
use crate::error::{Error, Result};
use crate::numerics::SampleStats;
use crate::spectral_model::SpectralModel;
use crate::stopping::{solve_vi_fd, Grid1D};

/// Discrete Skorokhod reflection: after each transition, push along the
/// control direction just enough to bring `<a, x>` back up to the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionPolicy {
    boundary: f64,
    trigger: Vec<f64>,
    direction: Vec<f64>,
    gain: f64,
}

/// Reflection of the control mode coordinate at `boundary`. A boundary of
/// negative infinity never acts.
pub fn reflected_policy(boundary: f64, model: &SpectralModel) -> ReflectionPolicy {
    let mut trigger = vec![0.0; model.dim()];
    trigger[model.control_mode()] = 1.0;
    ReflectionPolicy::on_coordinate(boundary, model, trigger).expect("unit trigger on the control mode")
}

impl ReflectionPolicy {
    /// Reflection of the coordinate `<trigger, x>`, which must move when
    /// the control direction is applied.
    pub fn on_coordinate(boundary: f64, model: &SpectralModel, trigger: Vec<f64>) -> Result<Self> {
        model.check_dim(&trigger)?;
        if boundary.is_nan() || boundary == f64::INFINITY {
            return Err(Error::InvalidParams(format!("reflection boundary {boundary}")));
        }
        let direction = model.direction();
        let gain: f64 = trigger.iter().zip(&direction).map(|(a, n)| a * n).sum();
        if !(gain > 0.0) {
            return Err(Error::InvalidParams("control direction does not raise the trigger coordinate".into()));
        }
        Ok(Self { boundary, trigger, direction, gain })
    }

    pub fn boundary(&self) -> f64 {
        self.boundary
    }

    pub fn trigger(&self) -> &[f64] {
        &self.trigger
    }

    /// Intensity needed at a pre-jump state.
    pub fn push(&self, pre_jump: &[f64]) -> f64 {
        let y: f64 = pre_jump.iter().zip(&self.trigger).map(|(x, a)| x * a).sum();
        ((self.boundary - y) / self.gain).max(0.0)
    }
}

impl Policy for ReflectionPolicy {
    fn act(&self, _step: usize, pre_jump: &[f64], direction: &mut [f64]) -> f64 {
        let dnu = self.push(pre_jump);
        if dnu > 0.0 {
            direction.copy_from_slice(&self.direction);
        }
        dnu
    }

    fn describe(&self) -> String {
        format!("reflection at {:.17e}", self.boundary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSample {
    pub x0: Vec<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub policy: String,
    pub horizon: f64,
    pub step: f64,
    pub n_paths: usize,
    pub seed: u64,
}

fn check_cost(model: &SpectralModel, cost: &CostSpec) -> Result<()> {
    if cost.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: cost.dim() });
    }
    Ok(())
}

/// Cost functional of `policy` started at `x0`.
#[allow(non_snake_case)]
pub fn estimate_V(
    model: &SpectralModel,
    cost: &CostSpec,
    x0: &[f64],
    policy: &dyn Policy,
    grid: &TimeGrid,
    mc: &McConfig,
) -> Result<ValueSample> {
    check_cost(model, cost)?;
    let out = run_arms(model, &DiscountedCost { cost }, &[Arm { x0, policy }], grid, mc, &[])?;
    let totals: Vec<f64> = out.iter().map(|p| p[0].total).collect();
    let s = SampleStats::from_slice(&totals);
    Ok(ValueSample {
        x0: x0.to_vec(),
        estimate: s.mean,
        std_error: s.std_error,
        policy: policy.describe(),
        horizon: grid.horizon(),
        step: grid.step(),
        n_paths: mc.n_paths,
        seed: mc.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub boundary: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Standard error of the difference to the best candidate under the
    /// shared noise.
    pub diff_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub best_boundary: f64,
    pub best_index: usize,
    pub curve: Vec<ThresholdPoint>,
    pub seed: u64,
}

/// Values of reflection policies at each candidate boundary under common
/// random numbers; ties go to the first candidate.
pub fn optimize_threshold(
    model: &SpectralModel,
    cost: &CostSpec,
    x0: &[f64],
    candidate_boundaries: &[f64],
    grid: &TimeGrid,
    mc: &McConfig,
) -> Result<ThresholdSweep> {
    let mut trigger = vec![0.0; model.dim()];
    trigger[model.control_mode()] = 1.0;
    optimize_threshold_on(model, cost, x0, candidate_boundaries, &trigger, grid, mc)
}

/// Threshold sweep for reflection of the coordinate `<trigger, x>`.
pub fn optimize_threshold_on(
    model: &SpectralModel,
    cost: &CostSpec,
    x0: &[f64],
    candidate_boundaries: &[f64],
    trigger: &[f64],
    grid: &TimeGrid,
    mc: &McConfig,
) -> Result<ThresholdSweep> {
    check_cost(model, cost)?;
    if candidate_boundaries.is_empty() {
        return Err(Error::InvalidParams("no candidate boundaries".into()));
    }
    if candidate_boundaries.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParams("candidate boundaries must be sorted".into()));
    }
    let policies = candidate_boundaries
        .iter()
        .map(|b| ReflectionPolicy::on_coordinate(*b, model, trigger.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let arms: Vec<Arm> = policies.iter().map(|p| Arm { x0, policy: p }).collect();
    let out = run_arms(model, &DiscountedCost { cost }, &arms, grid, mc, &[])?;
    let per_arm: Vec<Vec<f64>> = (0..arms.len()).map(|a| out.iter().map(|p| p[a].total).collect()).collect();
    let stats: Vec<SampleStats> = per_arm.iter().map(|v| SampleStats::from_slice(v)).collect();
    let mut best_index = 0;
    for (i, s) in stats.iter().enumerate() {
        if s.mean < stats[best_index].mean {
            best_index = i;
        }
    }
    let curve = stats
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let diff: Vec<f64> = per_arm[i].iter().zip(&per_arm[best_index]).map(|(a, b)| a - b).collect();
            ThresholdPoint {
                boundary: candidate_boundaries[i],
                estimate: s.mean,
                std_error: s.std_error,
                diff_std_error: SampleStats::from_slice(&diff).std_error,
            }
        })
        .collect();
    Ok(ThresholdSweep { best_boundary: candidate_boundaries[best_index], best_index, curve, seed: mc.seed })
}

/// Source of the reflection policy used at a starting point.
pub trait PolicySolver: Sync {
    fn solve(&self, x0: &[f64]) -> Result<ReflectionPolicy>;
}

/// The same policy everywhere.
pub struct FixedPolicy(pub ReflectionPolicy);

impl PolicySolver for FixedPolicy {
    fn solve(&self, _x0: &[f64]) -> Result<ReflectionPolicy> {
        Ok(self.0.clone())
    }
}

/// Reflection at the free boundary of the finite-difference stopping
/// solution, on the reduced coordinate.
pub struct FreeBoundaryPolicy<'a> {
    pub model: &'a SpectralModel,
    pub cost: &'a CostSpec,
    pub grid: Grid1D,
}

impl PolicySolver for FreeBoundaryPolicy<'_> {
    fn solve(&self, _x0: &[f64]) -> Result<ReflectionPolicy> {
        let sol = solve_vi_fd(self.model, self.cost, &self.grid)?;
        let b = sol.boundary.unwrap_or(f64::NEG_INFINITY);
        ReflectionPolicy::on_coordinate(b, self.model, sol.reduction.weights.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeConfig {
    pub eps: f64,
    /// Reuse the policy of `x0` at both shifted points instead of
    /// re-solving there.
    pub reuse_policy: bool,
    pub grid: TimeGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub x0: Vec<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub eps: f64,
    pub plus: f64,
    pub minus: f64,
    pub boundary: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Default finite-difference step: 5% of the stationary standard deviation
/// of the control mode.
pub fn default_eps(model: &SpectralModel) -> f64 {
    0.05 * model.stationary_std(model.control_mode())
}

/// Central difference `(V(x0 + eps n) - V(x0 - eps n)) / (2 eps)` under
/// common random numbers.
#[allow(non_snake_case)]
pub fn directional_derivative_V(
    model: &SpectralModel,
    cost: &CostSpec,
    x0: &[f64],
    policy_solver: &dyn PolicySolver,
    config: &DerivativeConfig,
    mc: &McConfig,
) -> Result<DerivativeEstimate> {
    check_cost(model, cost)?;
    model.check_dim(x0)?;
    let eps = config.eps;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
    }
    let n = model.direction();
    let xp: Vec<f64> = x0.iter().zip(&n).map(|(x, d)| x + eps * d).collect();
    let xm: Vec<f64> = x0.iter().zip(&n).map(|(x, d)| x - eps * d).collect();
    let base = policy_solver.solve(x0)?;
    let (pp, pm) = if config.reuse_policy {
        (base.clone(), base.clone())
    } else {
        (policy_solver.solve(&xp)?, policy_solver.solve(&xm)?)
    };
    let arms = [Arm { x0: &xp, policy: &pp }, Arm { x0: &xm, policy: &pm }];
    let out = run_arms(model, &DiscountedCost { cost }, &arms, &config.grid, mc, &[])?;
    let diffs: Vec<f64> = out.iter().map(|p| (p[0].total - p[1].total) / (2.0 * eps)).collect();
    let plus = SampleStats::from_slice(&out.iter().map(|p| p[0].total).collect::<Vec<_>>()).mean;
    let minus = SampleStats::from_slice(&out.iter().map(|p| p[1].total).collect::<Vec<_>>()).mean;
    let s = SampleStats::from_slice(&diffs);
    if s.std_error > 0.0 && s.std_error > 0.25 * s.mean.abs() {
        return Err(Error::StepTooSmall { estimate: s.mean, std_error: s.std_error });
    }
    Ok(DerivativeEstimate {
        x0: x0.to_vec(),
        estimate: s.mean,
        std_error: s.std_error,
        eps,
        plus,
        minus,
        boundary: base.boundary(),
        n_paths: mc.n_paths,
        seed: mc.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_model::build_diagonal_model;

    fn bench() -> SpectralModel {
        build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap()
    }

    #[test]
    fn reflection_examples() {
        let m = bench();
        let p = reflected_policy(-1.0, &m);
        let mut dir = [0.0];
        assert_eq!(p.act(3, &[0.0], &mut dir), 0.0);
        let d = p.act(3, &[-1.3], &mut dir);
        assert!((d - 0.3).abs() < 1e-15);
        assert_eq!(dir, [1.0]);
        assert!((-1.3 + d - -1.0f64).abs() < 1e-15);
        let never = reflected_policy(f64::NEG_INFINITY, &m);
        assert_eq!(never.act(0, &[-1e300], &mut dir), 0.0);
    }

    #[test]
    fn reflection_scales_with_direction_norm() {
        let m = build_diagonal_model(&[-1.0, -4.0], &[1.0, 1.0], &[2.0, 1.0], 0, 0.5).unwrap();
        let p = reflected_policy(1.0, &m);
        let mut dir = [0.0, 0.0];
        let d = p.act(0, &[0.0, 3.0], &mut dir);
        // n = 0.5 e_0: push 1 / 0.5
        assert!((d - 2.0).abs() < 1e-15);
        assert_eq!(dir, [0.5, 0.0]);
    }

    #[test]
    fn initial_jump_is_charged_in_full() {
        let m = build_diagonal_model(&[-1.0], &[0.0], &[1.0], 0, 0.5).unwrap();
        let zero = CostSpec::diagonal_quadratic(vec![0.0]).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let v = estimate_V(&m, &zero, &[-1.0], &reflected_policy(2.0, &m), &grid, &McConfig::new(2, 0)).unwrap();
        // initial jump 3, then the state decays below 2 again and is pushed back
        let h: f64 = 0.1;
        let pushes: f64 = (1..=10).map(|i| (-0.5 * h * i as f64).exp() * 2.0 * (1.0 - (-h).exp())).sum();
        assert!((v.estimate - (3.0 + pushes)).abs() < 1e-12);
    }

    #[test]
    fn deep_in_action_region_derivative_is_minus_one() {
        let m = bench();
        let cost = CostSpec::diagonal_quadratic(vec![1.0]).unwrap();
        let cfg = DerivativeConfig { eps: 0.05, reuse_policy: true, grid: TimeGrid::new(8.0, 800).unwrap() };
        let d = directional_derivative_V(&m, &cost, &[-6.0], &FixedPolicy(reflected_policy(-2.68, &m)), &cfg, &McConfig::new(200, 1))
            .unwrap();
        assert!((d.estimate + 1.0).abs() < 1e-9, "{}", d.estimate);
        assert!(d.std_error < 1e-9);
    }

    #[test]
    fn zero_cost_far_from_boundary_has_zero_derivative() {
        let m = bench();
        let cost = CostSpec::diagonal_quadratic(vec![0.0]).unwrap();
        let cfg = DerivativeConfig { eps: 0.05, reuse_policy: true, grid: TimeGrid::new(8.0, 800).unwrap() };
        let d = directional_derivative_V(&m, &cost, &[0.0], &FixedPolicy(reflected_policy(f64::NEG_INFINITY, &m)), &cfg, &McConfig::new(50, 1))
            .unwrap();
        assert_eq!(d.estimate, 0.0);
    }

    #[test]
    fn noisy_step_is_rejected() {
        let m = bench();
        let cost = CostSpec::diagonal_quadratic(vec![1.0]).unwrap();
        let cfg = DerivativeConfig { eps: 1e-9, reuse_policy: true, grid: TimeGrid::new(8.0, 400).unwrap() };
        // near y = 0 the derivative is close to zero and the reflection adds noise
        let r = directional_derivative_V(&m, &cost, &[0.05], &FixedPolicy(reflected_policy(-2.68, &m)), &cfg, &McConfig::new(200, 3));
        assert!(matches!(r, Err(Error::StepTooSmall { .. })), "{r:?}");
    }

    #[test]
    fn degenerate_sweep_returns_first_candidate() {
        let m = bench();
        let cost = CostSpec::diagonal_quadratic(vec![1.0]).unwrap();
        let grid = TimeGrid::new(4.0, 400).unwrap();
        let s = optimize_threshold(&m, &cost, &[0.0], &[-1.0, -1.0, -1.0], &grid, &McConfig::new(100, 2)).unwrap();
        assert_eq!(s.best_index, 0);
        assert!(s.curve.iter().all(|p| p.estimate == s.curve[0].estimate));
    }

    #[test]
    fn zero_cost_prefers_never_acting() {
        let m = bench();
        let cost = CostSpec::diagonal_quadratic(vec![0.0]).unwrap();
        let grid = TimeGrid::new(4.0, 400).unwrap();
        let s = optimize_threshold(&m, &cost, &[0.0], &[f64::NEG_INFINITY, -2.0, -1.0, 0.0], &grid, &McConfig::new(100, 2))
            .unwrap();
        assert_eq!(s.best_index, 0);
        assert_eq!(s.curve[0].estimate, 0.0);
    }
}
