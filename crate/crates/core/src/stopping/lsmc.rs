//! Regression Monte Carlo for the stopping problem on the full mode vector.
//!
//! Training paths start from a box around the payoff pivot and are generated
//! backward in time with the exact Ornstein-Uhlenbeck bridge, so only the
//! current time slice is ever held in memory.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::McConfig;
use crate::dynamics::{OuTransition, TimeGrid};
use crate::error::{Error, Result};
use crate::numerics::{path_rng, stream_seed, PathRng, SampleStats};
use crate::spectral_model::{phi_closed_form, AffineFunctional, SpectralModel};
use crate::costs::CostSpec;

const TRAINING_STREAM: u64 = 0x15_3C;
const VALUATION_STREAM: u64 = 0x15_3D;

#[derive(Debug, Clone, PartialEq)]
pub struct LsmcSettings {
    /// Time step of the exercise grid.
    pub step: f64,
    /// Stopping horizon; defaults to `12 / (rho - lambda)`.
    pub horizon: Option<f64>,
    pub degree: usize,
    /// Half-width of the box of training starts, in stationary standard deviations.
    pub dispersion: f64,
    /// Centre of the training box; defaults to the payoff pivot on the control mode.
    pub center: Option<Vec<f64>>,
}

impl Default for LsmcSettings {
    fn default() -> Self {
        Self { step: 5e-3, horizon: None, degree: 3, dispersion: 2.0, center: None }
    }
}

/// Fitted continuation value at one exercise date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionStep {
    pub step: usize,
    pub degree: usize,
    /// Modes with nonzero spread among in-the-money paths.
    pub active: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub condition: f64,
}

impl RegressionStep {
    fn continuation(&self, x: &[f64], exps: &[Vec<u32>], z: &mut Vec<f64>) -> f64 {
        z.clear();
        for (j, &k) in self.active.iter().enumerate() {
            z.push((x[k] - self.mean[j]) / self.scale[j]);
        }
        exps.iter().zip(&self.coefficients).map(|(e, c)| c * monomial(z, e)).sum()
    }
}

/// Exponent tuples of total degree at most `d` in `n` variables, in
/// graded order.
fn exponents(n: usize, d: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=d as u32 {
        let mut cur = vec![0u32; n];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    if pos + 1 >= cur.len() {
        if let Some(last) = cur.last_mut() {
            *last = left;
            out.push(cur.clone());
            *cur.last_mut().unwrap() = 0;
        } else if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

fn monomial(z: &[f64], e: &[u32]) -> f64 {
    z.iter().zip(e).map(|(z, e)| z.powi(*e as i32)).product()
}

fn n_basis(n: usize, d: usize) -> usize {
    // binomial(n + d, d)
    (1..=d).fold(1usize, |acc, j| acc * (n + j) / j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LsmcSolution {
    model: SpectralModel,
    phi: AffineFunctional,
    pub grid: TimeGrid,
    pub degree: usize,
    pub steps: Vec<Option<RegressionStep>>,
    pub seed: u64,
}

pub fn solve_lsmc(model: &SpectralModel, cost: &CostSpec, step: f64, mc: &McConfig, basis_degree: usize) -> Result<LsmcSolution> {
    let settings = LsmcSettings { step, degree: basis_degree, ..LsmcSettings::default() };
    solve_lsmc_with(model, cost, mc, &settings)
}

pub fn solve_lsmc_with(model: &SpectralModel, cost: &CostSpec, mc: &McConfig, settings: &LsmcSettings) -> Result<LsmcSolution> {
    let phi = phi_closed_form(model, cost)?;
    let n = model.dim();
    let p = n_basis(n, settings.degree);
    if mc.n_paths < 10 * p {
        return Err(Error::InvalidMonteCarlo(format!("{} paths is fewer than 10 per basis function ({p})", mc.n_paths)));
    }
    let rate = model.stopping_rate();
    let grid = TimeGrid::with_step(settings.horizon.unwrap_or(12.0 / rate), settings.step)?;
    let m_steps = grid.n_steps();
    let h = grid.step();
    let lam = model.eigenvalues();

    let center = match &settings.center {
        Some(c) => {
            model.check_dim(c)?;
            c.clone()
        }
        None => {
            let mut c = vec![0.0; n];
            let k = model.control_mode();
            if phi.slope[k] != 0.0 {
                c[k] = -phi.intercept / phi.slope[k];
            }
            c
        }
    };
    let spread: Vec<f64> = (0..n).map(|k| settings.dispersion * model.stationary_std(k)).collect();

    // variance of X_k(t_i) started from a point
    let var_at = |k: usize, i: usize| {
        let s = model.noise()[k];
        s * s * (-(2.0 * lam[k] * grid.time(i)).exp_m1()) / (2.0 * lam[k].abs())
    };

    let base = stream_seed(mc.seed, TRAINING_STREAM);
    let mut rngs: Vec<PathRng> = (0..mc.n_paths as u64).map(|i| path_rng(base, i)).collect();
    let mut starts = vec![0.0; mc.n_paths * n];
    let mut x = vec![0.0; mc.n_paths * n];
    starts.par_chunks_mut(n).zip(x.par_chunks_mut(n)).zip(rngs.par_iter_mut()).for_each(|((s, xp), rng)| {
        for k in 0..n {
            s[k] = center[k] + spread[k] * (2.0 * rng.random::<f64>() - 1.0);
        }
        for k in 0..n {
            let mean = (lam[k] * grid.horizon()).exp() * s[k];
            let z: f64 = StandardNormal.sample(rng);
            xp[k] = mean + var_at(k, m_steps).sqrt() * z;
        }
    });

    let mut cashflow: Vec<f64> = x.par_chunks(n).map(|xp| phi.eval(xp).max(0.0)).collect();
    let disc = (-rate * h).exp();
    let mut steps: Vec<Option<RegressionStep>> = vec![None; m_steps];

    for i in (0..m_steps).rev() {
        // bridge X_{i+1} back to X_i
        let coefs: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let vi = var_at(k, i);
                let vn = var_at(k, i + 1);
                if vn <= 0.0 {
                    (0.0, 0.0)
                } else {
                    let ed = (lam[k] * h).exp();
                    (ed * vi / vn, (vi * (vn - ed * ed * vi) / vn).max(0.0).sqrt())
                }
            })
            .collect();
        let (ti, tn) = (grid.time(i), grid.time(i + 1));
        x.par_chunks_mut(n).zip(starts.par_chunks(n)).zip(rngs.par_iter_mut()).for_each(|((xp, s), rng)| {
            for k in 0..n {
                let mi = (lam[k] * ti).exp() * s[k];
                let mn = (lam[k] * tn).exp() * s[k];
                let z: f64 = StandardNormal.sample(rng);
                xp[k] = mi + coefs[k].0 * (xp[k] - mn) + coefs[k].1 * z;
            }
        });
        for c in cashflow.iter_mut() {
            *c *= disc;
        }
        let itm: Vec<usize> = (0..mc.n_paths).filter(|&q| phi.eval(&x[q * n..(q + 1) * n]) > 0.0).collect();
        let fit = regress(i, &x, n, &itm, &cashflow, settings.degree)?;
        if let Some(fit) = &fit {
            let exps = exponents(fit.active.len(), fit.degree);
            let mut z = Vec::with_capacity(n);
            for &q in &itm {
                let xp = &x[q * n..(q + 1) * n];
                let payoff = phi.eval(xp);
                if payoff >= fit.continuation(xp, &exps, &mut z) {
                    cashflow[q] = payoff;
                }
            }
        }
        steps[i] = fit;
    }

    Ok(LsmcSolution { model: model.clone(), phi, grid, degree: settings.degree, steps, seed: mc.seed })
}

fn regress(step: usize, x: &[f64], n: usize, itm: &[usize], y: &[f64], max_degree: usize) -> Result<Option<RegressionStep>> {
    if itm.is_empty() {
        return Ok(None);
    }
    let count = itm.len() as f64;
    let mut mean = vec![0.0; n];
    for &q in itm {
        for k in 0..n {
            mean[k] += x[q * n + k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; n];
    for &q in itm {
        for k in 0..n {
            let d = x[q * n + k] - mean[k];
            var[k] += d * d;
        }
    }
    let active: Vec<usize> = (0..n).filter(|&k| (var[k] / count).sqrt() > 1e-12 * (1.0 + mean[k].abs())).collect();
    let a_mean: Vec<f64> = active.iter().map(|&k| mean[k]).collect();
    let a_scale: Vec<f64> = active.iter().map(|&k| (var[k] / count).sqrt()).collect();

    let mut last_condition = f64::INFINITY;
    for degree in (0..=max_degree).rev() {
        let exps = exponents(active.len(), degree);
        let p = exps.len();
        if itm.len() < 10 * p && degree > 0 {
            continue;
        }
        let mut design = DMatrix::<f64>::zeros(itm.len(), p);
        let mut z = vec![0.0; active.len()];
        for (r, &q) in itm.iter().enumerate() {
            for (j, &k) in active.iter().enumerate() {
                z[j] = (x[q * n + k] - a_mean[j]) / a_scale[j];
            }
            for (c, e) in exps.iter().enumerate() {
                design[(r, c)] = monomial(&z, e);
            }
        }
        let rhs = DVector::from_iterator(itm.len(), itm.iter().map(|&q| y[q]));
        let gram = design.tr_mul(&design);
        let eig = gram.clone().symmetric_eigen();
        let (emin, emax) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(a, b), e| (a.min(*e), b.max(*e)));
        let condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };
        let coefficients = if condition <= 1e8 {
            gram.cholesky().map(|c| c.solve(&design.tr_mul(&rhs)))
        } else {
            let svd = design.svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            last_condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            if last_condition > 1e12 {
                None
            } else {
                svd.solve(&rhs, 0.0).ok()
            }
        };
        if let Some(c) = coefficients {
            if c.iter().all(|v| v.is_finite()) {
                return Ok(Some(RegressionStep {
                    step,
                    degree,
                    active: active.clone(),
                    mean: a_mean,
                    scale: a_scale,
                    coefficients: c.iter().copied().collect(),
                    condition,
                }));
            }
        }
        last_condition = last_condition.min(condition);
    }
    Err(Error::IllConditionedRegression { step, condition: last_condition })
}

impl LsmcSolution {
    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    pub fn payoff(&self) -> &AffineFunctional {
        &self.phi
    }

    /// Whether the induced rule stops at grid step `step` in state `x`.
    pub fn stops(&self, step: usize, x: &[f64]) -> bool {
        let payoff = self.phi.eval(x);
        if payoff <= 0.0 {
            return false;
        }
        if step >= self.grid.n_steps() {
            return true;
        }
        match &self.steps[step] {
            Some(fit) => {
                let exps = exponents(fit.active.len(), fit.degree);
                let mut z = Vec::with_capacity(x.len());
                payoff >= fit.continuation(x, &exps, &mut z)
            }
            None => false,
        }
    }

    /// Value of the induced stopping rule at `x`, by forward simulation on
    /// paths independent of the training set; a low-biased estimate of `U(x)`.
    pub fn value_at(&self, x: &[f64], mc: &McConfig) -> Result<StoppingEstimate> {
        self.model.check_dim(x)?;
        if mc.n_paths == 0 {
            return Err(Error::InvalidMonteCarlo("need at least one path".into()));
        }
        let ou = OuTransition::new(&self.model, self.grid.step());
        let disc = (-self.model.stopping_rate() * self.grid.step()).exp();
        let exps: Vec<Option<Vec<Vec<u32>>>> =
            self.steps.iter().map(|s| s.as_ref().map(|f| exponents(f.active.len(), f.degree))).collect();
        let base = stream_seed(mc.seed, VALUATION_STREAM);
        let samples: Vec<f64> = (0..mc.n_paths as u64)
            .into_par_iter()
            .map(|p| {
                let mut rng = path_rng(base, p);
                let mut xs = x.to_vec();
                let mut z = Vec::with_capacity(xs.len());
                let mut d = 1.0;
                for i in 0..=self.grid.n_steps() {
                    if i > 0 {
                        ou.advance(&mut xs, &mut rng);
                        d *= disc;
                    }
                    let payoff = self.phi.eval(&xs);
                    if payoff > 0.0 {
                        let stop = match (self.steps.get(i), exps.get(i)) {
                            (Some(Some(fit)), Some(Some(e))) => payoff >= fit.continuation(&xs, e, &mut z),
                            (Some(None), _) => false,
                            _ => true,
                        };
                        if stop {
                            return d * payoff;
                        }
                    }
                }
                0.0
            })
            .collect();
        let s = SampleStats::from_slice(&samples);
        Ok(StoppingEstimate { mean: s.mean, std_error: s.std_error, n_paths: s.n, seed: mc.seed })
    }

    /// Scans the control mode coordinate of `base` upward from `lo` in steps
    /// of `spacing`; returns the last candidate at which the rule stops at
    /// time zero before the first one at which it continues.
    pub fn stopping_frontier(&self, base: &[f64], lo: f64, hi: f64, spacing: f64) -> Option<f64> {
        let k = self.model.control_mode();
        let mut x = base.to_vec();
        let n = ((hi - lo) / spacing).floor() as usize;
        let mut last_stop = None;
        for j in 0..=n {
            x[k] = lo + j as f64 * spacing;
            if self.stops(0, &x) {
                last_stop = Some(x[k]);
            } else if last_stop.is_some() {
                return last_stop;
            }
        }
        None
    }

    /// Regression coefficients as a TOML document.
    pub fn to_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            degree: usize,
            horizon: f64,
            n_steps: usize,
            seed: u64,
            step: Vec<&'a RegressionStep>,
        }
        let doc = Doc {
            degree: self.degree,
            horizon: self.grid.horizon(),
            n_steps: self.grid.n_steps(),
            seed: self.seed,
            step: self.steps.iter().flatten().collect(),
        };
        toml::to_string(&doc).map_err(|e| Error::Serialization(e.to_string()))
    }
}
