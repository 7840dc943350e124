//! Quenched transition densities, their tilted form, pairings and tail fields.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::env::{rho, Environment};

/// `P^ω(t,·)` on the parity sites: `p[k] = P(t, -t + 2k)`.
#[derive(Clone, Debug)]
pub struct QuenchedDensity {
    pub t: u64,
    pub p: Vec<f64>,
}

impl QuenchedDensity {
    pub fn delta() -> Self {
        QuenchedDensity { t: 0, p: vec![1.0] }
    }

    pub fn site(&self, k: usize) -> i64 {
        2 * k as i64 - self.t as i64
    }

    /// Value at any integer `y`, zero off parity or support.
    pub fn at(&self, y: i64) -> f64 {
        let s = y + self.t as i64;
        if s < 0 || s % 2 != 0 || s / 2 > self.t as i64 {
            0.0
        } else {
            self.p[(s / 2) as usize]
        }
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn step(&self, env: &Environment) -> Self {
        let mut next = vec![0.0; self.p.len() + 1];
        for (k, &p) in self.p.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let up = env.weight(self.t, self.site(k)) * p;
            next[k + 1] += up;
            next[k] += p - up;
        }
        QuenchedDensity { t: self.t + 1, p: next }
    }
}

/// All densities for `t = 0..=T`.
pub fn evolve_density(env: &Environment, t_max: u64) -> Vec<QuenchedDensity> {
    let mut out = Vec::with_capacity(t_max as usize + 1);
    out.push(QuenchedDensity::delta());
    for _ in 0..t_max {
        let next = out.last().unwrap().step(env);
        out.push(next);
    }
    out
}

/// Law of the maximum of `k` walkers moving independently in one environment.
#[derive(Clone, Debug)]
pub struct QuenchedMax {
    pub t: u64,
    /// `cdf[j] = P(max ≤ -t + 2j) = (1 - P(X > -t + 2j))^k`.
    pub cdf: Vec<f64>,
}

impl QuenchedMax {
    /// Tails are accumulated from the right, so probabilities far below rounding of 1 stay exact.
    pub fn new(density: &QuenchedDensity, k: f64) -> Self {
        let mut cdf = vec![0.0; density.p.len()];
        let mut above = 0.0f64;
        for j in (0..density.p.len()).rev() {
            cdf[j] = (k * (-above.min(1.0)).ln_1p()).exp();
            above += density.p[j];
        }
        QuenchedMax { t: density.t, cdf }
    }

    pub fn site(&self, j: usize) -> i64 {
        2 * j as i64 - self.t as i64
    }

    /// `E[max]` in site units.
    pub fn mean_site(&self) -> f64 {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let w = c - prev;
                prev = c;
                w * self.site(j) as f64
            })
            .sum()
    }

    /// Inverse transform: the smallest site `y` with `P(max ≤ y) ≥ u`.
    pub fn sample(&self, u: f64) -> i64 {
        let j = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        self.site(j)
    }
}

/// Density after `t_max` steps without keeping the history.
pub fn final_density(env: &Environment, t_max: u64) -> QuenchedDensity {
    let mut d = QuenchedDensity::delta();
    for _ in 0..t_max {
        d = d.step(env);
    }
    d
}

/// `log P^ω(t,·)` on parity sites, propagated in log space.
pub fn evolve_log_density(env: &Environment, t_max: u64) -> Vec<f64> {
    let mut lp = vec![0.0f64];
    for t in 0..t_max {
        let mut next = vec![f64::NEG_INFINITY; lp.len() + 1];
        for (k, &l) in lp.iter().enumerate() {
            if l == f64::NEG_INFINITY {
                continue;
            }
            let w = env.weight(t, 2 * k as i64 - t as i64);
            next[k + 1] = log_add(next[k + 1], l + w.ln());
            next[k] = log_add(next[k], l + (1.0 - w).ln());
        }
        lp = next;
    }
    lp
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log cosh λ` without cancellation for small `λ`.
pub fn log_cosh(l: f64) -> f64 {
    let s = (0.5 * l).sinh();
    (2.0 * s * s).ln_1p()
}

/// `log C_{N,t,x} = N^{1/4} x + (N^{1/2} - N log cosh N^{-1/4}) t`.
pub fn constant_log_c(n: f64, t: f64, x: f64) -> f64 {
    let l = n.powf(-0.25);
    n.powf(0.25) * x + n * (l * l - log_cosh(l)) * t
}

/// Tilted density `W(r,y) = Z_N(r, y - rN^{-1/4})` on parity sites.
#[derive(Clone, Debug)]
pub struct TiltedDensity {
    pub n: f64,
    pub lambda: f64,
    pub rho: f64,
    pub r: u64,
    pub w: Vec<f64>,
}

impl TiltedDensity {
    pub fn new(n: f64) -> Self {
        TiltedDensity { n, lambda: n.powf(-0.25), rho: rho(n), r: 0, w: vec![1.0] }
    }

    #[inline]
    pub fn site(&self, k: usize) -> i64 {
        2 * k as i64 - self.r as i64
    }

    /// Macroscopic position `N^{-1/2}(y - λ r)` of parity index `k`.
    #[inline]
    pub fn x_of(&self, k: usize) -> f64 {
        (self.site(k) as f64 - self.lambda * self.r as f64) / self.n.sqrt()
    }

    pub fn time(&self) -> f64 {
        self.r as f64 / self.n
    }

    pub fn at(&self, y: i64) -> f64 {
        let s = y + self.r as i64;
        if s < 0 || s % 2 != 0 || s / 2 > self.r as i64 {
            0.0
        } else {
            self.w[(s / 2) as usize]
        }
    }

    /// One step; the weights used are written into `omega` (indexed like `w`).
    pub fn step_recording(&mut self, env: &Environment, omega: &mut Vec<f64>) {
        omega.clear();
        let r = self.r;
        let base = -(r as i64);
        omega.extend((0..self.w.len() as i64).map(|k| env.weight(r, base + 2 * k)));
        let next = self.advance(omega);
        self.w = next;
        self.r += 1;
    }

    pub fn step(&mut self, env: &Environment) {
        let mut scratch = Vec::with_capacity(self.w.len());
        self.step_recording(env, &mut scratch);
    }

    fn advance(&self, omega: &[f64]) -> Vec<f64> {
        let (up, dn) = (2.0 * self.rho, 2.0 * (1.0 - self.rho));
        let mut next = Vec::with_capacity(self.w.len() + 1);
        let mut carry = 0.0;
        for (&w, &om) in self.w.iter().zip(omega) {
            next.push(carry + dn * (1.0 - om) * w);
            carry = up * om * w;
        }
        next.push(carry);
        next
    }

    /// `𝒰_N(r/N, φ) = Σ_y W(r,y) φ(N^{-1/2}(y - λ r))`.
    pub fn pair(&self, phi: &TestFunction) -> f64 {
        self.w.iter().enumerate().map(|(k, &w)| if w == 0.0 { 0.0 } else { w * phi.eval(self.x_of(k)) }).sum()
    }

    pub fn mass(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Quenched tail field `F_N(t,x)` with `t = r/N`.
    pub fn tail_field(&self, x: f64) -> f64 {
        let y0 = self.lambda * self.r as f64 + self.n.sqrt() * x;
        let mut acc = 0.0;
        for k in (0..self.w.len()).rev() {
            let y = self.site(k) as f64;
            if y < y0 {
                break;
            }
            acc += self.w[k] * (self.lambda * (y0 - y)).exp();
        }
        self.n.powf(0.25) * acc
    }

    /// Raw quenched tail `Σ_{k' ≥ k0} P(r, site(k'))` recovered from `W`.
    pub fn raw_tail_from(&self, k0: usize) -> f64 {
        let l2 = self.lambda * self.lambda;
        let base = -l2 * self.r as f64 + (l2 - log_cosh(self.lambda)) * self.r as f64;
        (k0..self.w.len())
            .map(|k| {
                let w = self.w[k];
                if w == 0.0 {
                    0.0
                } else {
                    (w.ln() - self.lambda * self.site(k) as f64 - base).exp()
                }
            })
            .sum()
    }
}

pub fn evolve_tilted(env: &Environment, n: f64, t_max: u64) -> Vec<TiltedDensity> {
    let mut cur = TiltedDensity::new(n);
    let mut out = vec![cur.clone()];
    for _ in 0..t_max {
        cur.step(env);
        out.push(cur.clone());
    }
    out
}

/// Linear interpolation of a pairing between grid times.
pub fn interpolate_pairing(n: f64, t: f64, at_floor: f64, at_ceil: f64) -> f64 {
    let s = n * t;
    let frac = s - s.floor();
    (1.0 - frac) * at_floor + frac * at_ceil
}

/// `log W - log P` at site `y`, time `r`.
pub fn tilt_log_factor(n: f64, r: u64, y: i64) -> f64 {
    let l = n.powf(-0.25);
    l * (y as f64 - l * r as f64) + (l * l - log_cosh(l)) * r as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    /// `ε^{-1} π^{-1/2} exp(-((x-a)/ε)^2)`.
    GaussianBump { a: f64, eps: f64 },
    /// `exp(1 - 1/(1 - ((x-c)/r)^2))` on `|x-c| < r`.
    SmoothBump { c: f64, r: f64 },
    Indicator { lo: f64, hi: f64 },
    /// `(1 - ((x-c)/r)^2)^2` on `|x-c| < r`.
    PolyWindow { c: f64, r: f64 },
    Constant { value: f64 },
    Square { inner: Box<TestFunction> },
}

impl TestFunction {
    /// Short stable name used in output tables.
    pub fn label(&self) -> String {
        match self {
            TestFunction::GaussianBump { a, eps } => format!("gaussian(a={a},eps={eps})"),
            TestFunction::SmoothBump { c, r } => format!("bump(c={c},r={r})"),
            TestFunction::Indicator { lo, hi } => format!("indicator[{lo},{hi}]"),
            TestFunction::PolyWindow { c, r } => format!("poly(c={c},r={r})"),
            TestFunction::Constant { value } => format!("const({value})"),
            TestFunction::Square { inner } => format!("({})^2", inner.label()),
        }
    }

    pub fn gaussian(a: f64, eps: f64) -> Self {
        TestFunction::GaussianBump { a, eps }
    }

    pub fn indicator(lo: f64, hi: f64) -> Self {
        TestFunction::Indicator { lo, hi }
    }

    pub fn one() -> Self {
        TestFunction::Constant { value: 1.0 }
    }

    pub fn squared(&self) -> Self {
        TestFunction::Square { inner: Box::new(self.clone()) }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::GaussianBump { a, eps } => {
                let u = (x - a) / eps;
                (-u * u).exp() / (eps * PI.sqrt())
            }
            TestFunction::SmoothBump { c, r } => {
                let u = (x - c) / r;
                if u.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - u * u)).exp()
                } else {
                    0.0
                }
            }
            TestFunction::Indicator { lo, hi } => {
                if x >= *lo && x <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::PolyWindow { c, r } => {
                let u = (x - c) / r;
                if u.abs() < 1.0 {
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            }
            TestFunction::Constant { value } => *value,
            TestFunction::Square { inner } => {
                let v = inner.eval(x);
                v * v
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            TestFunction::GaussianBump { eps, .. } => 1.0 / (eps * PI.sqrt()),
            TestFunction::SmoothBump { .. } | TestFunction::Indicator { .. } | TestFunction::PolyWindow { .. } => 1.0,
            TestFunction::Constant { value } => value.abs(),
            TestFunction::Square { inner } => inner.sup_norm().powi(2),
        }
    }

    /// Analytic upper bound on `sup |φ'|`; infinite for the indicator.
    pub fn lipschitz(&self) -> f64 {
        match self {
            // max |d/dx e^{-u^2}| = sqrt(2/e) per unit u
            TestFunction::GaussianBump { eps, .. } => (2.0 / std::f64::consts::E).sqrt() / (eps * eps * PI.sqrt()),
            // numeric max of the bump derivative in u is 2.1704
            TestFunction::SmoothBump { r, .. } => 2.171 / r,
            TestFunction::Indicator { .. } => f64::INFINITY,
            // max |4u(1-u^2)| = 8/(3√3)
            TestFunction::PolyWindow { r, .. } => 8.0 / (3.0 * 3f64.sqrt()) / r,
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Square { inner } => 2.0 * inner.sup_norm() * inner.lipschitz(),
        }
    }

    pub fn c1_norm(&self) -> f64 {
        self.sup_norm() + self.lipschitz()
    }

    /// `sup{|x| : x ∈ supp φ}`.
    pub fn support_radius(&self) -> f64 {
        match self {
            TestFunction::GaussianBump { .. } | TestFunction::Constant { .. } => f64::INFINITY,
            TestFunction::SmoothBump { c, r } | TestFunction::PolyWindow { c, r } => c.abs() + r,
            TestFunction::Indicator { lo, hi } => lo.abs().max(hi.abs()),
            TestFunction::Square { inner } => inner.support_radius(),
        }
    }

    /// Interval outside which `eval` returns exactly zero.
    pub fn window(&self) -> (f64, f64) {
        match self {
            // exp(-u²) underflows to 0 for u > 27.3
            TestFunction::GaussianBump { a, eps } => (a - 27.5 * eps, a + 27.5 * eps),
            TestFunction::SmoothBump { c, r } | TestFunction::PolyWindow { c, r } => (c - r, c + r),
            TestFunction::Indicator { lo, hi } => (*lo, *hi),
            TestFunction::Constant { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            TestFunction::Square { inner } => inner.window(),
        }
    }

    /// `∫ p_t(x) φ(x) dx`, closed form where available, otherwise quadrature.
    pub fn heat_pairing(&self, t: f64) -> f64 {
        match self {
            TestFunction::GaussianBump { a, eps } => {
                let v = t + eps * eps / 2.0;
                (-a * a / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
            }
            TestFunction::Indicator { lo, hi } => {
                let s = t.sqrt();
                crate::stats::normal_cdf(hi / s) - crate::stats::normal_cdf(lo / s)
            }
            TestFunction::Constant { value } => *value,
            _ => {
                let s = t.sqrt();
                crate::stats::integrate(|x| self.eval(x) * (-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt(), -12.0 * s, 12.0 * s, 20_000)
            }
        }
    }
}

/// Exact `P(T,·)` for the symmetric walk via log-gamma, parity indexed.
pub fn binomial_density(t: u64) -> Vec<f64> {
    (0..=t).map(|k| crate::chaos::srw_kernel(t, 2 * k as i64 - t as i64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_spec, EnvKind};
    use approx::assert_abs_diff_eq;

    fn env(kind: EnvKind, seed: u64) -> Environment {
        Environment::new(seed, make_spec(kind).unwrap())
    }

    #[test]
    fn degenerate_is_binomial() {
        let e = env(EnvKind::DegenerateHalf, 1);
        let d = evolve_density(&e, 40);
        for t in [0u64, 1, 7, 40] {
            for (k, &p) in d[t as usize].p.iter().enumerate() {
                assert_abs_diff_eq!(p, crate::chaos::srw_kernel(t, 2 * k as i64 - t as i64), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn bernoulli_single_site() {
        let e = env(EnvKind::BernoulliHalf, 9);
        for d in evolve_density(&e, 200) {
            assert_eq!(d.p.iter().filter(|&&p| p != 0.0).count(), 1);
            assert_eq!(d.mass(), 1.0);
        }
    }

    #[test]
    fn two_steps_by_paths() {
        let e = env(EnvKind::Uniform, 4);
        let d = evolve_density(&e, 2);
        let w = |t: u64, x: i64| e.weight(t, x);
        let p2 = |y: i64| -> f64 {
            let mut s = 0.0;
            for a in [-1i64, 1] {
                for b in [-1i64, 1] {
                    if a + b != y {
                        continue;
                    }
                    let p1 = if a == 1 { w(0, 0) } else { 1.0 - w(0, 0) };
                    let q = if b == 1 { w(1, a) } else { 1.0 - w(1, a) };
                    s += p1 * q;
                }
            }
            s
        };
        for y in [-2, 0, 2] {
            assert_abs_diff_eq!(d[2].at(y), p2(y), epsilon = 1e-15);
        }
    }

    #[test]
    fn log_c_examples() {
        assert_eq!(constant_log_c(16.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(constant_log_c(1.0, 1.0, 1.0), 2.0 - 1f64.cosh().ln(), epsilon = 1e-14);
        let n = 65536.0f64;
        let coef = n.sqrt() - n * log_cosh(n.powf(-0.25));
        assert!((coef - (n.sqrt() / 2.0 + 1.0 / 12.0)).abs() < 1e-4);
    }

    #[test]
    fn tilted_matches_log_raw() {
        let n = 64.0;
        let e = env(EnvKind::TwoPoint { a: 0.25 }, 5);
        let tilted = evolve_tilted(&e, n, 64);
        let t_max = 64u64;
        for t in [1u64, 32, 64] {
            let lp = evolve_log_density(&e, t);
            let w = &tilted[t as usize];
            for (k, &l) in lp.iter().enumerate() {
                let y = 2 * k as i64 - t as i64;
                let expect = (l + tilt_log_factor(n, t, y)).exp();
                if w.w[k] > 1e-280 {
                    assert!(((w.w[k] - expect) / w.w[k]).abs() < 1e-9);
                }
            }
            assert!(t <= t_max);
        }
    }

    #[test]
    fn stability_smoke() {
        let e = env(EnvKind::TwoPoint { a: 0.25 }, 2);
        let w = evolve_tilted(&e, 16.0, 16);
        let max = w.iter().flat_map(|d| d.w.iter().cloned()).fold(0.0, f64::max);
        assert!(max <= 3.0, "max W = {max}");
    }

    #[test]
    fn degenerate_total_mass_is_one() {
        let e = env(EnvKind::DegenerateHalf, 2);
        let mut w = TiltedDensity::new(256.0);
        for _ in 0..256 {
            w.step(&e);
        }
        assert_abs_diff_eq!(w.pair(&TestFunction::one()), 1.0, epsilon = 1e-12);
        let w0 = TiltedDensity::new(256.0);
        assert_abs_diff_eq!(w0.pair(&TestFunction::gaussian(0.3, 0.5)), TestFunction::gaussian(0.3, 0.5).eval(0.0), epsilon = 1e-15);
    }

    #[test]
    fn max_mean_matches_samples_on_a_fine_grid() {
        let env = Environment::new(3, make_spec(EnvKind::Beta { alpha: 1.0 }).unwrap());
        let m = QuenchedMax::new(&final_density(&env, 40), 50.0);
        let grid = 200_000;
        let avg: f64 = (0..grid).map(|i| m.sample((i as f64 + 0.5) / grid as f64) as f64).sum::<f64>() / grid as f64;
        assert!((avg - m.mean_site()).abs() < 1e-3);
    }

    #[test]
    fn max_of_one_walker_is_the_walker() {
        let e = env(EnvKind::TwoPoint { a: 0.25 }, 5);
        let d = final_density(&e, 12);
        let m = QuenchedMax::new(&d, 1.0);
        let mut acc = 0.0;
        for (j, &p) in d.p.iter().enumerate() {
            acc += p;
            assert_abs_diff_eq!(m.cdf[j], acc, epsilon = 1e-14);
        }
        assert_eq!(m.sample(0.0), -12);
        assert_eq!(m.sample(1.0), m.site(d.p.iter().rposition(|&p| p > 0.0).unwrap()));
    }

    #[test]
    fn max_of_many_walkers_uses_the_power() {
        let d = QuenchedDensity { t: 2, p: vec![0.25, 0.5, 0.25] };
        let m = QuenchedMax::new(&d, 3.0);
        assert_abs_diff_eq!(m.cdf[0], 0.25f64.powi(3), epsilon = 1e-15);
        assert_abs_diff_eq!(m.cdf[1], 0.75f64.powi(3), epsilon = 1e-15);
        assert_eq!(m.cdf[2], 1.0);
        assert_eq!(m.sample(0.5), 2);
    }

    #[test]
    fn tail_field_direct_sum() {
        let n = 256.0f64;
        let e = env(EnvKind::DegenerateHalf, 2);
        let mut w = TiltedDensity::new(n);
        for _ in 0..256 {
            w.step(&e);
        }
        let x = 0.25;
        let y0 = n.powf(0.75) + n.sqrt() * x;
        let lc = constant_log_c(n, 1.0, x);
        let direct: f64 = (0..=256u64)
            .map(|k| 2 * k as i64 - 256)
            .filter(|&y| y as f64 >= y0)
            .map(|y| (lc + crate::chaos::srw_kernel(256, y).ln()).exp())
            .sum::<f64>()
            * n.powf(0.25);
        assert_abs_diff_eq!(w.tail_field(x), direct, epsilon = 1e-10 * direct);
        assert_eq!(w.tail_field(100.0), 0.0);
    }
}
