//! Exact simulation of the mild solution on a uniform time grid.
//!
//! Each mode is an Ornstein-Uhlenbeck process, so one grid step is sampled
//! from its exact Gaussian transition. Controls act only at grid times; the
//! slot at `t_0 = 0` carries the initial jump.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::costs::McConfig;
use crate::error::{Error, Result};
use crate::numerics::{fmt17, path_rng, PathRng};
use crate::spectral_model::SpectralModel;

/// Uniform grid `0 = t_0 < ... < t_M = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid with step as close as possible to `step` (never larger) that
    /// divides the horizon exactly.
    pub fn with_step(horizon: f64, step: f64) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        let n = (horizon / step - 1e-9).ceil().max(1.0) as usize;
        Self::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.step()
        }
    }

    /// Index of the grid time closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.step()).round().max(0.0) as usize).min(self.n_steps)
    }
}

/// Exact one-step Ornstein-Uhlenbeck transition of every mode.
#[derive(Debug, Clone)]
pub struct OuTransition {
    pub decay: Vec<f64>,
    pub scale: Vec<f64>,
}

impl OuTransition {
    pub fn new(model: &SpectralModel, h: f64) -> Self {
        let decay = model.eigenvalues().iter().map(|l| (l * h).exp()).collect();
        let scale = model
            .eigenvalues()
            .iter()
            .zip(model.noise())
            .map(|(l, s)| s * (-(2.0 * l * h).exp_m1() / (2.0 * l.abs())).sqrt())
            .collect();
        Self { decay, scale }
    }

    /// Advances `x` in place by one step, consuming one standard normal per mode.
    #[inline]
    pub fn advance(&self, x: &mut [f64], rng: &mut PathRng) {
        for ((xk, d), s) in x.iter_mut().zip(&self.decay).zip(&self.scale) {
            let z: f64 = StandardNormal.sample(rng);
            *xk = d * *xk + s * z;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub grid: TimeGrid,
    /// `values[i]` is the (post-jump) state at `t_i`.
    pub values: Vec<Vec<f64>>,
}

impl StatePath {
    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// CSV with header `time,mode_1,...,mode_N`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for k in 1..=self.dim() {
            out.push_str(&format!(",mode_{k}"));
        }
        out.push('\n');
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&fmt17(self.grid.time(i)));
            for x in v {
                out.push(',');
                out.push_str(&fmt17(*x));
            }
            out.push('\n');
        }
        out
    }
}

/// Direction/intensity decomposition of a discrete control.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    pub grid: TimeGrid,
    pub directions: Vec<Vec<f64>>,
    pub intensity_increments: Vec<f64>,
}

const PRICE_TOL: f64 = 1e-12;

impl ControlPath {
    pub fn new(
        model: &SpectralModel,
        grid: TimeGrid,
        directions: Vec<Vec<f64>>,
        intensity_increments: Vec<f64>,
    ) -> Result<Self> {
        let m = grid.n_steps() + 1;
        if directions.len() != m || intensity_increments.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: directions.len().min(intensity_increments.len()) });
        }
        for (i, (theta, dnu)) in directions.iter().zip(&intensity_increments).enumerate() {
            model.check_dim(theta)?;
            if !(*dnu >= 0.0) || !dnu.is_finite() {
                return Err(Error::NegativeIncrement { step: i });
            }
            check_direction(model, theta).map_err(|reason| Error::InadmissiblePolicy { step: i, reason })?;
        }
        Ok(Self { grid, directions, intensity_increments })
    }

    /// No control at all, with the model's direction as placeholder.
    pub fn zero(model: &SpectralModel, grid: TimeGrid) -> Self {
        let m = grid.n_steps() + 1;
        Self { grid, directions: vec![model.direction(); m], intensity_increments: vec![0.0; m] }
    }

    /// Control intensity only along the model's direction.
    pub fn along_direction(model: &SpectralModel, grid: TimeGrid, increments: Vec<f64>) -> Result<Self> {
        let m = grid.n_steps() + 1;
        Self::new(model, grid, vec![model.direction(); m], increments)
    }

    /// `theta_i * d nu_i` for every step.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        self.directions
            .iter()
            .zip(&self.intensity_increments)
            .map(|(t, d)| t.iter().map(|x| x * d).collect())
            .collect()
    }
}

pub(crate) fn check_direction(model: &SpectralModel, theta: &[f64]) -> std::result::Result<(), String> {
    if theta.iter().any(|t| !(*t >= 0.0)) {
        return Err("direction leaves the positive cone".into());
    }
    let qt: f64 = theta.iter().zip(model.price()).map(|(t, q)| t * q).sum();
    if (qt - 1.0).abs() > PRICE_TOL {
        return Err(format!("direction has price {qt}, expected 1"));
    }
    Ok(())
}

/// Splits raw increments `dI_i` into a unit-price direction and an intensity:
/// `theta_i = dI_i / <q, dI_i>`, `d nu_i = <q, dI_i>`. Zero increments keep
/// the model direction as placeholder and zero intensity.
pub fn decompose_control(model: &SpectralModel, grid: TimeGrid, raw_increments: &[Vec<f64>]) -> Result<ControlPath> {
    let m = grid.n_steps() + 1;
    if raw_increments.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: raw_increments.len() });
    }
    if !(model.price_floor() > 0.0) {
        return Err(Error::PriceFloorViolated(format!("price floor {} is not positive", model.price_floor())));
    }
    let mut directions = Vec::with_capacity(m);
    let mut increments = Vec::with_capacity(m);
    for (i, di) in raw_increments.iter().enumerate() {
        model.check_dim(di)?;
        if di.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::NegativeIncrement { step: i });
        }
        if di.iter().all(|x| *x == 0.0) {
            directions.push(model.direction());
            increments.push(0.0);
            continue;
        }
        let price: f64 = di.iter().zip(model.price()).map(|(x, q)| x * q).sum();
        if !(price > 0.0) {
            return Err(Error::PriceFloorViolated(format!("increment at step {i} has nonpositive price {price}")));
        }
        directions.push(di.iter().map(|x| x / price).collect());
        increments.push(price);
    }
    Ok(ControlPath { grid, directions, intensity_increments: increments })
}

/// Uncontrolled path `index` under base seed `base_seed`.
pub fn simulate_path(model: &SpectralModel, x0: &[f64], grid: &TimeGrid, base_seed: u64, index: u64) -> Result<StatePath> {
    model.check_dim(x0)?;
    let ou = OuTransition::new(model, grid.step());
    let mut rng = path_rng(base_seed, index);
    let mut x = x0.to_vec();
    let mut values = Vec::with_capacity(grid.n_steps() + 1);
    values.push(x.clone());
    for _ in 0..grid.n_steps() {
        ou.advance(&mut x, &mut rng);
        values.push(x.clone());
    }
    Ok(StatePath { grid: *grid, values })
}

/// Exact uncontrolled path: `X_{i+1,k} = e^{lambda_k h} X_{i,k} + s_k xi`,
/// `s_k^2 = sigma_k^2 (1 - e^{2 lambda_k h}) / (2 |lambda_k|)`.
pub fn simulate_uncontrolled(model: &SpectralModel, x0: &[f64], grid: &TimeGrid, seed: u64) -> Result<StatePath> {
    simulate_path(model, x0, grid, seed, 0)
}

pub fn simulate_batch(model: &SpectralModel, x0: &[f64], grid: &TimeGrid, mc: &McConfig) -> Result<Vec<StatePath>> {
    model.check_dim(x0)?;
    (0..mc.n_paths as u64).into_par_iter().map(|p| simulate_path(model, x0, grid, mc.seed, p)).collect()
}

/// Adds the control convolution `sum_{j<=i} e^{Lambda (t_i - t_j)} theta_j d nu_j`
/// to an uncontrolled path. Controls along the model direction use the
/// scalar recursion `S_{i+1} = e^{lambda h} S_i + d nu_{i+1}`.
pub fn apply_control(model: &SpectralModel, uncontrolled: &StatePath, control: &ControlPath) -> Result<StatePath> {
    if uncontrolled.grid != control.grid {
        return Err(Error::GridMismatch);
    }
    if uncontrolled.values.len() != control.intensity_increments.len() {
        return Err(Error::GridMismatch);
    }
    model.check_dim(&uncontrolled.values[0])?;
    let h = control.grid.step();
    let n_hat = model.direction();
    let eigen_direction = control
        .directions
        .iter()
        .zip(&control.intensity_increments)
        .all(|(t, d)| *d == 0.0 || *t == n_hat);
    let mut values = uncontrolled.values.clone();
    if eigen_direction {
        let k = model.control_mode();
        let n = model.direction_norm();
        let decay = (model.control_eigenvalue() * h).exp();
        let mut s = 0.0;
        for (i, v) in values.iter_mut().enumerate() {
            if i > 0 {
                s *= decay;
            }
            s += control.intensity_increments[i];
            v[k] += n * s;
        }
    } else {
        let decay: Vec<f64> = model.eigenvalues().iter().map(|l| (l * h).exp()).collect();
        let mut s = vec![0.0; model.dim()];
        for (i, v) in values.iter_mut().enumerate() {
            let dnu = control.intensity_increments[i];
            for k in 0..s.len() {
                if i > 0 {
                    s[k] *= decay[k];
                }
                s[k] += control.directions[i][k] * dnu;
                v[k] += s[k];
            }
        }
    }
    Ok(StatePath { grid: uncontrolled.grid, values })
}

/// Feedback rule producing control increments at grid times.
pub trait Policy: Sync {
    /// Intensity to apply at grid step `step` given the pre-jump state.
    /// When positive, the unit-price direction is written into `direction`.
    fn act(&self, step: usize, pre_jump: &[f64], direction: &mut [f64]) -> f64;

    fn describe(&self) -> String {
        "feedback policy".into()
    }
}

/// Never acts.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAction;

impl Policy for NoAction {
    fn act(&self, _step: usize, _pre: &[f64], _direction: &mut [f64]) -> f64 {
        0.0
    }

    fn describe(&self) -> String {
        "no action".into()
    }
}

/// Replays a fixed control path regardless of the state.
#[derive(Debug, Clone)]
pub struct OpenLoop {
    pub control: ControlPath,
}

impl Policy for OpenLoop {
    fn act(&self, step: usize, _pre: &[f64], direction: &mut [f64]) -> f64 {
        let dnu = self.control.intensity_increments.get(step).copied().unwrap_or(0.0);
        if dnu > 0.0 {
            direction.copy_from_slice(&self.control.directions[step]);
        }
        dnu
    }

    fn describe(&self) -> String {
        "open-loop schedule".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SampleStats;
    use crate::spectral_model::build_diagonal_model;
    use proptest::prelude::*;

    fn one_mode(sigma: f64) -> SpectralModel {
        build_diagonal_model(&[-1.0], &[sigma], &[1.0], 0, 0.5).unwrap()
    }

    #[test]
    fn decompose_examples() {
        let m = build_diagonal_model(&[-1.0, -2.0], &[1.0, 1.0], &[1.0, 1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let c = decompose_control(&m, grid, &[vec![3.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(c.directions[0], vec![1.0, 0.0]);
        assert_eq!(c.intensity_increments[0], 3.0);
        assert_eq!(c.directions[1], vec![0.5, 0.5]);
        assert_eq!(c.intensity_increments[1], 1.0);
        assert!(matches!(
            decompose_control(&m, grid, &[vec![-1.0, 0.0], vec![0.0, 0.0]]),
            Err(Error::NegativeIncrement { step: 0 })
        ));
        let zero = decompose_control(&m, grid, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(zero.intensity_increments, vec![0.0, 0.0]);
        assert_eq!(zero.directions[0], m.direction());
    }

    #[test]
    fn decompose_requires_positive_price_floor() {
        let m = build_diagonal_model(&[-1.0, -2.0], &[1.0, 1.0], &[1.0, 0.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(1.0, 1).unwrap();
        assert!(matches!(
            decompose_control(&m, grid, &[vec![0.0, 1.0], vec![0.0, 0.0]]),
            Err(Error::PriceFloorViolated(_))
        ));
    }

    #[test]
    fn noiseless_decay_is_exact() {
        let m = one_mode(0.0);
        let grid = TimeGrid::new(2f64.ln(), 1).unwrap();
        let p = simulate_uncontrolled(&m, &[4.0], &grid, 3).unwrap();
        assert!((p.values[1][0] - 2.0).abs() < 1e-15);
        let z = simulate_uncontrolled(&m, &[0.0], &TimeGrid::new(3.0, 30).unwrap(), 3).unwrap();
        assert!(z.values.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn control_convolution_examples() {
        let m = one_mode(0.0);
        let grid = TimeGrid::new(2.0 * 2f64.ln(), 2).unwrap();
        let u = simulate_uncontrolled(&m, &[0.0], &grid, 0).unwrap();
        let same = apply_control(&m, &u, &ControlPath::zero(&m, grid)).unwrap();
        assert_eq!(same, u);

        let single = ControlPath::along_direction(&m, grid, vec![1.0, 0.0, 0.0]).unwrap();
        let x = apply_control(&m, &u, &single).unwrap();
        assert!((x.values[1][0] - 0.5).abs() < 1e-15);

        let two = ControlPath::along_direction(&m, grid, vec![1.0, 1.0, 0.0]).unwrap();
        let x = apply_control(&m, &u, &two).unwrap();
        // oracle: direct evaluation of the discrete convolution sum
        let h = grid.step();
        let direct: f64 = (0..=2).map(|j| (-((2 - j) as f64) * h).exp() * two.intensity_increments[j]).sum();
        assert!((x.values[2][0] - direct).abs() < 1e-15);
        assert!((x.values[2][0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn scalar_recursion_matches_direct_convolution() {
        let m = build_diagonal_model(&[-1.0, -3.0], &[0.5, 0.5], &[2.0, 1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let h = grid.step();
        let u = simulate_uncontrolled(&m, &[0.3, -0.2], &grid, 9).unwrap();
        let incs: Vec<f64> = (0..=10).map(|i| (i % 3) as f64 * 0.1).collect();
        let along = ControlPath::along_direction(&m, grid, incs.clone()).unwrap();
        let x = apply_control(&m, &u, &along).unwrap();
        for i in 0..=10 {
            let conv: f64 = (0..=i).map(|j| (-((i - j) as f64) * h).exp() * incs[j] * 0.5).sum();
            assert!((x.values[i][0] - u.values[i][0] - conv).abs() < 1e-14);
            assert_eq!(x.values[i][1], u.values[i][1]);
        }

        let mut mixed = along.clone();
        for (i, d) in mixed.directions.iter_mut().enumerate() {
            if incs[i] > 0.0 {
                *d = vec![0.25, 0.5];
            }
        }
        let y = apply_control(&m, &u, &mixed).unwrap();
        for i in 0..=10 {
            for (k, w) in [0.25, 0.5].iter().enumerate() {
                let l = m.eigenvalues()[k];
                let conv: f64 = (0..=i).map(|j| (l * (i - j) as f64 * h).exp() * incs[j] * w).sum();
                assert!((y.values[i][k] - u.values[i][k] - conv).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stationary_variance_matches_closed_form() {
        // lambda = -1, sigma = 2: stationary variance sigma^2 / (2|lambda|) = 2
        let m = build_diagonal_model(&[-1.0], &[2.0], &[1.0], 0, 0.5).unwrap();
        let grid = TimeGrid::new(10.0, 5).unwrap();
        let n = 100_000;
        let samples: Vec<f64> = (0..n as u64)
            .into_par_iter()
            .map(|p| simulate_path(&m, &[0.0], &grid, 11, p).unwrap().values[5][0])
            .collect();
        let sq: Vec<f64> = samples.iter().map(|x| x * x).collect();
        let s = SampleStats::from_slice(&sq);
        let exact = 2.0 * (1.0 - (-20.0f64).exp());
        assert!((s.mean - exact).abs() <= 3.0 * s.std_error, "{} vs {exact} se {}", s.mean, s.std_error);
    }

    #[test]
    fn second_moment_matches_closed_form_at_fixed_time() {
        let m = build_diagonal_model(&[-0.5, -2.0], &[1.0, 0.4], &[1.0, 1.0], 0, 0.5).unwrap();
        let x0 = [1.5, -1.0];
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let n = 40_000;
        let sq: Vec<f64> = (0..n as u64)
            .into_par_iter()
            .map(|p| {
                let v = &simulate_path(&m, &x0, &grid, 5, p).unwrap().values[4];
                v[0] * v[0] + v[1] * v[1]
            })
            .collect();
        let s = SampleStats::from_slice(&sq);
        let exact: f64 = (0..2)
            .map(|k| {
                let l = m.eigenvalues()[k];
                let sg = m.noise()[k];
                (2.0 * l).exp() * x0[k] * x0[k] + sg * sg * (1.0 - (2.0 * l).exp()) / (2.0 * l.abs())
            })
            .sum();
        assert!((s.mean - exact).abs() <= 3.0 * s.std_error);
    }

    #[test]
    fn csv_has_header_and_17_digits() {
        let m = one_mode(1.0);
        let p = simulate_uncontrolled(&m, &[1.0], &TimeGrid::new(1.0, 2).unwrap(), 1).unwrap();
        let csv = p.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("time,mode_1"));
        assert_eq!(lines.next(), Some("0.0000000000000000e0,1.0000000000000000e0"));
        assert_eq!(csv.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn decompose_then_reconstruct_is_identity(raw in prop::collection::vec(prop::collection::vec(0.0..5.0f64, 3), 4)) {
            let m = build_diagonal_model(&[-1.0, -2.0, -3.0], &[1.0; 3], &[1.0, 2.0, 0.5], 0, 0.5).unwrap();
            let grid = TimeGrid::new(1.0, 3).unwrap();
            let c = decompose_control(&m, grid, &raw).unwrap();
            for (orig, back) in raw.iter().zip(c.reconstruct()) {
                for (a, b) in orig.iter().zip(&back) {
                    prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
                }
            }
        }

        #[test]
        fn controlled_state_is_linear_in_data(
            aa in 0.0..2.0f64, bb in 0.0..2.0f64,
            x in prop::collection::vec(-3.0..3.0f64, 2), y in prop::collection::vec(-3.0..3.0f64, 2),
            ia in prop::collection::vec(0.0..1.0f64, 6), ib in prop::collection::vec(0.0..1.0f64, 6),
        ) {
            let m = build_diagonal_model(&[-1.0, -2.5], &[0.0, 0.0], &[1.0, 1.0], 0, 0.5).unwrap();
            let grid = TimeGrid::new(1.0, 5).unwrap();
            let run = |x0: &[f64], inc: &[f64]| {
                let u = simulate_uncontrolled(&m, x0, &grid, 4).unwrap();
                apply_control(&m, &u, &ControlPath::along_direction(&m, grid, inc.to_vec()).unwrap()).unwrap()
            };
            let xa = run(&x, &ia);
            let xb = run(&y, &ib);
            let xs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| aa * a + bb * b).collect();
            let inc: Vec<f64> = ia.iter().zip(&ib).map(|(a, b)| aa * a + bb * b).collect();
            let comb = run(&xs, &inc);
            for i in 0..=5 {
                for k in 0..2 {
                    let lin = aa * xa.values[i][k] + bb * xb.values[i][k];
                    prop_assert!((comb.values[i][k] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
                }
            }
        }

        #[test]
        fn control_dominates_uncontrolled(incs in prop::collection::vec(0.0..1.0f64, 11), seed in 0u64..1000) {
            let m = build_diagonal_model(&[-1.0, -2.0], &[1.0, 0.5], &[1.0, 1.0], 0, 0.5).unwrap();
            let grid = TimeGrid::new(1.0, 10).unwrap();
            let u = simulate_uncontrolled(&m, &[0.2, 0.1], &grid, seed).unwrap();
            let x = apply_control(&m, &u, &ControlPath::along_direction(&m, grid, incs).unwrap()).unwrap();
            for (a, b) in x.values.iter().zip(&u.values) {
                prop_assert!(a[0] >= b[0]);
                prop_assert_eq!(a[1], b[1]);
            }
        }
    }
}
