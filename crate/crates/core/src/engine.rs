//! Path engine shared by every Monte Carlo estimator.
//!
//! Each path draws one vector of standard normals per step and feeds it to
//! every arm, so arms see common random numbers. Per-path results are
//! collected in index order, which keeps estimates independent of the
//! number of worker threads.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::costs::McConfig;
use crate::dynamics::{check_direction, OuTransition, Policy, TimeGrid};
use crate::error::{Error, Result};
use crate::numerics::{path_rng, trapezoid_tail_factor, CompensatedSum};
use crate::spectral_model::SpectralModel;

/// One initial state driven by one policy.
#[derive(Clone, Copy)]
pub struct Arm<'a> {
    pub x0: &'a [f64],
    pub policy: &'a dyn Policy,
}

/// Additive path functional `sum e^{-rho t} (f(X) dt + j(jump))`.
pub trait PathFunctional: Sync {
    fn running(&self, x: &[f64]) -> f64;
    fn jump(&self, pre: &[f64], post: &[f64], intensity: f64) -> f64;
}

/// Accumulated discounted functional and post-jump state at a grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub accumulated: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmOutcome {
    pub total: f64,
    pub checkpoints: Vec<Checkpoint>,
}

struct ArmState {
    x: Vec<f64>,
    pre: Vec<f64>,
    direction: Vec<f64>,
    acc: CompensatedSum,
    left: f64,
    checkpoints: Vec<Checkpoint>,
}

/// Applies the policy at `step`, charging the jump at discount `disc`.
/// `st.left` must hold the running term at the pre-jump state.
#[inline]
fn jump_step<F: PathFunctional + ?Sized>(
    model: &SpectralModel,
    functional: &F,
    policy: &dyn Policy,
    st: &mut ArmState,
    step: usize,
    disc: f64,
) -> Result<()> {
    let dnu = policy.act(step, &st.x, &mut st.direction);
    if dnu != 0.0 {
        if !(dnu > 0.0) || !dnu.is_finite() {
            return Err(Error::InadmissiblePolicy { step, reason: format!("intensity increment {dnu}") });
        }
        check_direction(model, &st.direction).map_err(|reason| Error::InadmissiblePolicy { step, reason })?;
        st.pre.copy_from_slice(&st.x);
        for (x, t) in st.x.iter_mut().zip(&st.direction) {
            *x += t * dnu;
        }
        st.acc.add(disc * functional.jump(&st.pre, &st.x, dnu));
        st.left = functional.running(&st.x);
    }
    Ok(())
}

/// Runs every arm on every path. The result is indexed `[path][arm]`;
/// `checkpoints` are grid step indices at which the running totals and
/// post-jump states are recorded.
///
/// Between grid times `G` is taken linear in time and integrated exactly
/// against the discount, using the post-jump value on the left and the
/// pre-jump value on the right.
pub fn run_arms<F: PathFunctional + ?Sized>(
    model: &SpectralModel,
    functional: &F,
    arms: &[Arm],
    grid: &TimeGrid,
    mc: &McConfig,
    checkpoints: &[usize],
) -> Result<Vec<Vec<ArmOutcome>>> {
    run_arms_at_rate(model, model.discount(), functional, arms, grid, mc, checkpoints)
}

/// [`run_arms`] with the discount rate `rate` in place of the model's.
pub fn run_arms_at_rate<F: PathFunctional + ?Sized>(
    model: &SpectralModel,
    rate: f64,
    functional: &F,
    arms: &[Arm],
    grid: &TimeGrid,
    mc: &McConfig,
    checkpoints: &[usize],
) -> Result<Vec<Vec<ArmOutcome>>> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidDiscount(rate));
    }
    if mc.n_paths == 0 {
        return Err(Error::InvalidMonteCarlo("need at least one path".into()));
    }
    for arm in arms {
        model.check_dim(arm.x0)?;
    }
    if let Some(&c) = checkpoints.iter().find(|&&c| c > grid.n_steps()) {
        return Err(Error::InvalidGrid(format!("checkpoint step {c} is beyond the horizon")));
    }
    let n = model.dim();
    let h = grid.step();
    let rho = rate;
    let ou = OuTransition::new(model, h);
    let total_w = -(-rho * h).exp_m1() / rho;
    let w_right = h * trapezoid_tail_factor(rho * h);
    let w_left = total_w - w_right;
    let step_disc = (-rho * h).exp();

    let run_path = |p: usize| -> Result<Vec<ArmOutcome>> {
        let mut rng = path_rng(mc.seed, p as u64);
        let mut states: Vec<ArmState> = arms
            .iter()
            .map(|a| ArmState {
                x: a.x0.to_vec(),
                pre: vec![0.0; n],
                direction: vec![0.0; n],
                acc: CompensatedSum::new(),
                left: 0.0,
                checkpoints: Vec::with_capacity(checkpoints.len()),
            })
            .collect();
        let mut z = vec![0.0; n];
        for (arm, st) in arms.iter().zip(states.iter_mut()) {
            st.left = functional.running(&st.x);
            jump_step(model, functional, arm.policy, st, 0, 1.0)?;
        }
        let mut disc = 1.0;
        let mut next_check = checkpoints.iter().copied().min();
        for i in 0..=grid.n_steps() {
            if next_check == Some(i) {
                next_check = checkpoints.iter().copied().filter(|&c| c > i).min();
                for st in states.iter_mut() {
                    st.checkpoints.push(Checkpoint { step: i, accumulated: st.acc.value(), state: st.x.clone() });
                }
            }
            if i == grid.n_steps() {
                break;
            }
            for zk in z.iter_mut() {
                *zk = StandardNormal.sample(&mut rng);
            }
            // e^{-rho t_{i+1}}, recomputed directly every so often to avoid drift
            let next_disc = if (i + 1) % 64 == 0 { (-rho * grid.time(i + 1)).exp() } else { disc * step_disc };
            for (arm, st) in arms.iter().zip(states.iter_mut()) {
                for k in 0..n {
                    st.x[k] = ou.decay[k] * st.x[k] + ou.scale[k] * z[k];
                }
                let right = functional.running(&st.x);
                st.acc.add(disc * (w_left * st.left + w_right * right));
                st.left = right;
                jump_step(model, functional, arm.policy, st, i + 1, next_disc)?;
            }
            disc = next_disc;
        }
        states
            .into_iter()
            .map(|st| {
                let total = st.acc.value();
                if !total.is_finite() || st.x.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteSample { path: p });
                }
                Ok(ArmOutcome { total, checkpoints: st.checkpoints })
            })
            .collect()
    };

    (0..mc.n_paths).into_par_iter().map(run_path).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{CostSpec, DiscountedCost};
    use crate::dynamics::{simulate_path, NoAction};
    use crate::spectral_model::build_diagonal_model;

    struct Identity;
    impl PathFunctional for Identity {
        fn running(&self, _x: &[f64]) -> f64 {
            1.0
        }
        fn jump(&self, _pre: &[f64], _post: &[f64], intensity: f64) -> f64 {
            intensity
        }
    }

    struct Constant(f64);
    impl Policy for Constant {
        fn act(&self, _step: usize, _pre: &[f64], direction: &mut [f64]) -> f64 {
            direction[0] = 1.0;
            self.0
        }
    }

    #[test]
    fn unit_running_cost_integrates_the_discount_exactly() {
        let m = build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(4.0, 37).unwrap();
        let out = run_arms(&m, &Identity, &[Arm { x0: &[0.0], policy: &NoAction }], &grid, &McConfig::new(3, 1), &[]).unwrap();
        let exact = (1.0 - (-2.0f64).exp()) / 0.5;
        for p in &out {
            assert!((p[0].total - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn jumps_are_charged_at_their_discount() {
        let m = build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        struct JumpsOnly;
        impl PathFunctional for JumpsOnly {
            fn running(&self, _x: &[f64]) -> f64 {
                0.0
            }
            fn jump(&self, _pre: &[f64], _post: &[f64], intensity: f64) -> f64 {
                intensity
            }
        }
        let out = run_arms(&m, &JumpsOnly, &[Arm { x0: &[0.0], policy: &Constant(2.0) }], &grid, &McConfig::new(1, 0), &[]).unwrap();
        let exact: f64 = (0..=4).map(|i| 2.0 * (-0.5 * 0.25 * i as f64).exp()).sum();
        assert!((out[0][0].total - exact).abs() < 1e-14);
    }

    #[test]
    fn arms_share_noise_with_the_path_simulator() {
        let m = build_diagonal_model(&[-1.0, -2.0], &[1.0, 0.5], &[1.0, 1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let x0 = [0.5, -0.5];
        let out = run_arms(&m, &Identity, &[Arm { x0: &x0, policy: &NoAction }], &grid, &McConfig::new(4, 21), &[3, 10]).unwrap();
        for (p, arms) in out.iter().enumerate() {
            let path = simulate_path(&m, &x0, &grid, 21, p as u64).unwrap();
            assert_eq!(arms[0].checkpoints[0].state, path.values[3]);
            assert_eq!(arms[0].checkpoints[1].state, path.values[10]);
            assert_eq!(arms[0].checkpoints[1].accumulated, arms[0].total);
        }
    }

    #[test]
    fn inadmissible_policies_are_rejected() {
        struct Bad(f64, f64);
        impl Policy for Bad {
            fn act(&self, _step: usize, _pre: &[f64], direction: &mut [f64]) -> f64 {
                direction[0] = self.1;
                self.0
            }
        }
        let m = build_diagonal_model(&[-1.0], &[1.0], &[1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let mc = McConfig::new(2, 0);
        for bad in [Bad(-1.0, 1.0), Bad(f64::NAN, 1.0), Bad(1.0, 2.0), Bad(1.0, -1.0)] {
            let r = run_arms(&m, &Identity, &[Arm { x0: &[0.0], policy: &bad }], &grid, &mc, &[]);
            assert!(matches!(r, Err(Error::InadmissiblePolicy { step: 0, .. })));
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let m = build_diagonal_model(&[-1.0, -2.0], &[1.0, 0.5], &[1.0, 1.0], 0, 0.5).unwrap();
        let cost = CostSpec::diagonal_quadratic(vec![1.0, 1.0]).unwrap();
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                run_arms(&m, &DiscountedCost { cost: &cost }, &[Arm { x0: &[1.0, 1.0], policy: &NoAction }], &grid, &McConfig::new(257, 5), &[])
                    .unwrap()
            })
        };
        assert_eq!(run(1), run(4));
    }
}
