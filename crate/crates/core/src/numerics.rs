//! Small numerical helpers shared by the estimators: reproducible seed
//! derivation, compensated summation, sample statistics and log-log fits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used for every simulated path.
pub type PathRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` under base seed `base`. Every estimator derives its
/// per-path streams through this function, so two estimators sharing a base
/// seed see identical noise on identical path indices.
pub fn path_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Derives an independent base seed for a named sub-stream.
pub fn stream_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base.rotate_left(17) ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn path_rng(base: u64, index: u64) -> PathRng {
    PathRng::seed_from_u64(path_seed(base, index))
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Mean and standard error of the mean of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl SampleStats {
    pub fn from_slice(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, n };
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        if n == 1 {
            return Self { mean, std_error: 0.0, n };
        }
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        let var = ss / (n as f64 - 1.0);
        Self { mean, std_error: (var / n as f64).sqrt(), n }
    }
}

/// Least-squares slope of `log(defect)` against `log(step)`: the observed
/// convergence order of a refinement ladder. Returns `None` when fewer than
/// two levels carry a positive defect.
pub fn fitted_order(steps: &[f64], defects: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(defects)
        .filter(|(h, d)| **h > 0.0 && **d > 0.0 && d.is_finite())
        .map(|(h, d)| (h.ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Formats a float with 17 significant digits, the precision used by every
/// CSV artifact.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `(1 - e^{-x}(1 + x)) / x^2`, evaluated without cancellation near zero.
pub(crate) fn trapezoid_tail_factor(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // sum_{n>=2} (-1)^n (n-1) x^{n-2} / n!
        let mut term_pow = 1.0;
        let mut fact = 2.0;
        let mut acc = 0.0;
        for n in 2..12u32 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * (n as f64 - 1.0) * term_pow / fact;
            term_pow *= x;
            fact *= (n + 1) as f64;
        }
        acc
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (x * x)
    }
}
