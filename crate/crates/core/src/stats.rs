//! Small numerical and statistical helpers shared by the experiments.

use serde::Serialize;
use statrs::function::erf::erfc;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Composite Simpson rule with `n` (rounded up to even) panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Sample mean with standard error.
#[derive(Clone, Copy, Debug, Default, Serialize, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, se: f64::INFINITY, n };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Estimate { mean, se: (var / n as f64).sqrt(), n }
    }

    /// `|mean - target| / se`.
    pub fn z(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.se
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// `|a - b|` in units of the combined SE.
pub fn combined_z(a: &Estimate, b: &Estimate) -> f64 {
    (a.mean - b.mean).abs() / (a.se * a.se + b.se * b.se).sqrt()
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Standard error of the sample variance from the fourth central moment.
pub fn variance_se(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// Euler–Mascheroni constant, the standard Gumbel mean.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
