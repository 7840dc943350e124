//! Polynomial chaos expansion of the quenched density in the centred weights `ω̂ = 2ω - 1`.
//!
//! Orders are built by a layered heat recursion: the order-`k` term at time `n`
//! is `∇ U_k(n)` with `U_k(i+1) = H U_k(i) + ω̂(i)/2 · T_{k-1}(i)`, where `H` is one
//! symmetric walk step and `∇f(y) = f(y-1) - f(y+1)`.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::env::{splitmix64, EnvSpec, Environment};
use crate::qkernel::constant_log_c;
use crate::stats::{sample_variance, variance_se, Estimate};
use crate::Error;

pub const RECONSTRUCT_MAX_N: u64 = 10;

/// `p(n,y) = 2^{-n} C(n, (n+y)/2)` as `(numerator, n)`, exact for `n <= 62`.
pub fn srw_kernel_exact(n: u64, y: i64) -> Option<(u64, u64)> {
    if n > 62 {
        return None;
    }
    if y.unsigned_abs() > n || (n as i64 + y) % 2 != 0 {
        return Some((0, n));
    }
    let k = ((n as i64 + y) / 2) as u64;
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    Some((c as u64, n))
}

/// Simple symmetric random walk transition probability.
pub fn srw_kernel(n: u64, y: i64) -> f64 {
    if y.unsigned_abs() > n || (n as i64 + y) % 2 != 0 {
        return 0.0;
    }
    if n <= 62 {
        let (num, e) = srw_kernel_exact(n, y).unwrap();
        return num as f64 / 2f64.powi(e as i32);
    }
    let k = ((n as i64 + y) / 2) as f64;
    let nf = n as f64;
    (ln_gamma(nf + 1.0) - ln_gamma(k + 1.0) - ln_gamma(nf - k + 1.0) - nf * std::f64::consts::LN_2).exp()
}

/// `D(m,d) = p(m,d-1) - p(m,d+1)`.
pub fn diff_kernel(m: u64, d: i64) -> f64 {
    srw_kernel(m, d - 1) - srw_kernel(m, d + 1)
}

/// A time-ordered tuple of space-time sites with its coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct ChaosTerm {
    pub sites: Vec<(u64, i64)>,
    pub coefficient: f64,
}

/// `φ_k^{(n,y)}(z_1..z_k)`; zero unless times strictly increase below `n`.
pub fn chaos_coefficient(n: u64, y: i64, z: &[(u64, i64)]) -> f64 {
    if z.is_empty() {
        return srw_kernel(n, y);
    }
    if z.windows(2).any(|w| w[1].0 <= w[0].0) || z.last().unwrap().0 >= n {
        return 0.0;
    }
    let (i1, j1) = z[0];
    let mut c = srw_kernel(i1, j1);
    for w in z.windows(2) {
        c *= diff_kernel(w[1].0 - w[0].0 - 1, w[1].1 - w[0].1);
    }
    let (ik, jk) = *z.last().unwrap();
    c *= diff_kernel(n - ik - 1, y - jk);
    c * 0.5f64.powi(z.len() as i32)
}

/// Site-indexed field on `[-width, width]`.
#[derive(Clone)]
struct Line {
    off: i64,
    v: Vec<f64>,
}

impl Line {
    fn zeros(width: i64) -> Self {
        Line { off: width, v: vec![0.0; (2 * width + 1) as usize] }
    }
    #[inline]
    fn get(&self, j: i64) -> f64 {
        let i = j + self.off;
        if i < 0 || i >= self.v.len() as i64 {
            0.0
        } else {
            self.v[i as usize]
        }
    }
    fn heat(&self) -> Self {
        let mut out = Line::zeros(self.off);
        for j in -self.off..=self.off {
            out.v[(j + self.off) as usize] = 0.5 * (self.get(j - 1) + self.get(j + 1));
        }
        out
    }
    fn grad(&self) -> Self {
        let mut out = Line::zeros(self.off);
        for j in -self.off..=self.off {
            out.v[(j + self.off) as usize] = self.get(j - 1) - self.get(j + 1);
        }
        out
    }
}

/// Chaos terms `T_0..=T_kmax` at time `n`, all sites in `[-n-1, n+1]`.
fn layered_terms<F: Fn(u64, i64) -> f64>(hat: F, n: u64, kmax: usize) -> Vec<Vec<f64>> {
    let width = n as i64 + 1;
    let mut u: Vec<Line> = vec![Line::zeros(width); kmax + 1];
    let mut t_prev: Vec<Line> = vec![Line::zeros(width); kmax + 1];
    t_prev[0].v[width as usize] = 1.0;
    for i in 0..n {
        // sources use T_{k-1}(i) and ω̂(i,·); then advance every order
        let mut next_u = Vec::with_capacity(kmax + 1);
        next_u.push(Line::zeros(width));
        for k in 1..=kmax {
            let mut nu = u[k].heat();
            for j in -(i as i64)..=(i as i64) {
                let s = t_prev[k - 1].get(j);
                if s != 0.0 {
                    nu.v[(j + width) as usize] += 0.5 * hat(i, j) * s;
                }
            }
            next_u.push(nu);
        }
        u = next_u;
        let mut t_next = vec![t_prev[0].heat()];
        for k in 1..=kmax {
            t_next.push(u[k].grad());
        }
        t_prev = t_next;
    }
    t_prev.into_iter().map(|l| l.v).collect()
}

/// All chaos orders of `P^ω(n,y)`; their sum equals the quenched density.
pub fn chaos_orders(env: &Environment, n: u64, y: i64) -> Result<Vec<f64>, Error> {
    if n > RECONSTRUCT_MAX_N {
        return Err(Error::Param(format!("exact reconstruction capped at n={RECONSTRUCT_MAX_N}, got {n}")));
    }
    let terms = layered_terms(|i, j| 2.0 * env.weight(i, j) - 1.0, n, n as usize);
    let idx = (y + n as i64 + 1) as usize;
    Ok(terms.iter().map(|t| if idx < t.len() { t[idx] } else { 0.0 }).collect())
}

pub fn reconstruct(env: &Environment, n: u64, y: i64) -> Result<f64, Error> {
    Ok(chaos_orders(env, n, y)?.iter().sum())
}

/// Lattice point nearest `(t, x)` on the moderate-deviation grid: `(n, y, x_actual)`.
pub fn lattice_point(big_n: f64, t: f64, x: f64) -> (u64, i64, f64) {
    let n = (big_n * t).round() as u64;
    let lam = big_n.powf(-0.25);
    let target = lam * n as f64 + big_n.sqrt() * x;
    let mut y = target.round() as i64;
    if (y - n as i64).rem_euclid(2) != 0 {
        y += if target > y as f64 { 1 } else { -1 };
    }
    let xa = (y as f64 - lam * n as f64) / big_n.sqrt();
    (n, y, xa)
}

/// `(√N/2) C_{N,t,x}`: the factor turning a lattice term at the moderate-deviation point into a density.
pub fn term_scale(big_n: f64, n: u64, x: f64) -> f64 {
    0.5 * big_n.sqrt() * constant_log_c(big_n, n as f64 / big_n, x).exp()
}

/// Exact `Var T_1(n,y) = σ² Σ_z p(z)² D(n-i-1, y-j)²`.
pub fn first_order_variance(var: f64, n: u64, y: i64) -> f64 {
    let mut tot = 0.0;
    for i in 0..n {
        let m = n - i - 1;
        let mut j = -(i as i64);
        while j <= i as i64 {
            let d = diff_kernel(m, y - j);
            if d != 0.0 {
                tot += srw_kernel(i, j).powi(2) * d * d;
            }
            j += 2;
        }
    }
    var * tot
}

#[derive(Clone, Debug, Serialize)]
pub struct TermStat {
    pub big_n: f64,
    pub t: f64,
    pub x: f64,
    pub k: usize,
    pub mean: Estimate,
    pub variance: f64,
    pub variance_se: f64,
    /// Exact finite-N variance when available (order 1).
    pub exact_variance: Option<f64>,
    /// `8σ²` continuum kernel value `(8σ²)^k ∫ ∏ p²` for orders 0 and 1.
    pub continuum_variance: Option<f64>,
    pub samples: Vec<f64>,
}

/// Statistics of the rescaled order-`k` chaos term at the moderate-deviation point.
pub fn rescaled_term_stat(spec: &EnvSpec, big_n: f64, t: f64, x: f64, k: usize, replicas: usize, seed: u64) -> TermStat {
    let (n, y, xa) = lattice_point(big_n, t, x);
    let scale = term_scale(big_n, n, xa);
    let samples = rescaled_term_samples(spec, n, y, k, replicas, seed, scale);
    let mean = Estimate::of(&samples);
    let s2 = spec.var;
    let pt = crate::sheref::heat_kernel(t, xa).unwrap_or(0.0);
    let (exact, cont) = match k {
        0 => (Some(0.0), Some(0.0)),
        1 => (
            Some(scale * scale * first_order_variance(s2, n, y)),
            Some(8.0 * s2 * pt * pt * (std::f64::consts::PI * t).sqrt() / 2.0),
        ),
        _ => (None, None),
    };
    TermStat {
        big_n,
        t,
        x: xa,
        k,
        mean,
        variance: sample_variance(&samples),
        variance_se: variance_se(&samples),
        exact_variance: exact,
        continuum_variance: cont,
        samples,
    }
}

/// Per-replica values of the scaled order-`k` term; replica `r` uses environment seed `splitmix64(seed ^ r)`.
pub fn rescaled_term_samples(spec: &EnvSpec, n: u64, y: i64, k: usize, replicas: usize, seed: u64, scale: f64) -> Vec<f64> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let env = Environment::new(splitmix64(seed ^ (r as u64).wrapping_mul(0x9E37_79B9)), spec.clone());
            let terms = layered_terms(|i, j| 2.0 * env.weight(i, j) - 1.0, n, k);
            let idx = (y + n as i64 + 1) as usize;
            scale * terms[k][idx]
        })
        .collect()
}

/// Products of orders `a` and `b` per replica, for the orthogonality check.
pub fn cross_order_products(spec: &EnvSpec, big_n: f64, t: f64, x: f64, a: usize, b: usize, replicas: usize, seed: u64) -> Vec<f64> {
    let (n, y, xa) = lattice_point(big_n, t, x);
    let scale = term_scale(big_n, n, xa);
    let kmax = a.max(b);
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let env = Environment::new(splitmix64(seed ^ (r as u64).wrapping_mul(0x9E37_79B9)), spec.clone());
            let terms = layered_terms(|i, j| 2.0 * env.weight(i, j) - 1.0, n, kmax);
            let idx = (y + n as i64 + 1) as usize;
            scale * scale * terms[a][idx] * terms[b][idx]
        })
        .collect()
}

/// Exact `E[P^ω(n,y)^2]` from the annealed two-point chain.
pub fn pointwise_second_moment(spec: &EnvSpec, n: u64, y: i64) -> f64 {
    // state (a, b): parity indices of the two walkers at time r
    let mut cur = vec![1.0f64];
    let mut dim = 1usize;
    let p_same = [spec.m(0, 2), spec.m(1, 1), spec.m(2, 0)];
    for _ in 0..n {
        let nd = dim + 1;
        let mut next = vec![0.0; nd * nd];
        for a in 0..dim {
            for b in 0..dim {
                let v = cur[a * dim + b];
                if v == 0.0 {
                    continue;
                }
                if a == b {
                    next[a * nd + a] += v * p_same[0];
                    next[(a + 1) * nd + a] += v * p_same[1];
                    next[a * nd + a + 1] += v * p_same[1];
                    next[(a + 1) * nd + a + 1] += v * p_same[2];
                } else {
                    let q = 0.25 * v;
                    next[a * nd + b] += q;
                    next[(a + 1) * nd + b] += q;
                    next[a * nd + b + 1] += q;
                    next[(a + 1) * nd + b + 1] += q;
                }
            }
        }
        cur = next;
        dim = nd;
    }
    let s = y + n as i64;
    if s < 0 || s % 2 != 0 || s / 2 > n as i64 {
        return 0.0;
    }
    let k = (s / 2) as usize;
    cur[k * dim + k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_spec, EnvKind};
    use crate::qkernel::evolve_density;

    #[test]
    fn kernel_examples() {
        assert_eq!(srw_kernel(2, 0), 0.5);
        assert_eq!(srw_kernel(0, 0), 1.0);
        assert_eq!(srw_kernel(3, 0), 0.0);
        for n in 0..=30u64 {
            let total: u64 = (-(n as i64)..=n as i64).map(|y| srw_kernel_exact(n, y).unwrap().0).sum();
            assert_eq!(total, 1u64 << n);
        }
        assert!((srw_kernel(40, 4) - srw_kernel_exact(40, 4).unwrap().0 as f64 / 2f64.powi(40)).abs() < 1e-15);
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(chaos_coefficient(1, 1, &[(0, 0)]), 0.5);
        assert_eq!(chaos_coefficient(4, 2, &[]), srw_kernel(4, 2));
        assert_eq!(chaos_coefficient(3, 0, &[(0, 0)]), 0.0);
        assert_eq!(chaos_coefficient(3, 1, &[(1, 1), (1, -1)]), 0.0);
    }

    fn brute(env: &Environment, n: u64, y: i64) -> f64 {
        // enumerate all increasing tuples of sites in the cone
        let sites: Vec<(u64, i64)> = (0..n).flat_map(|i| (0..=i).map(move |k| (i, 2 * k as i64 - i as i64))).collect();
        let mut total = srw_kernel(n, y);
        let m = sites.len();
        for mask in 1u64..(1u64 << m) {
            let z: Vec<(u64, i64)> = (0..m).filter(|b| mask >> b & 1 == 1).map(|b| sites[b]).collect();
            let c = chaos_coefficient(n, y, &z);
            if c == 0.0 {
                continue;
            }
            total += c * z.iter().map(|&(i, j)| 2.0 * env.weight(i, j) - 1.0).product::<f64>();
        }
        total
    }

    #[test]
    fn recursion_equals_tuple_enumeration() {
        let env = Environment::new(3, make_spec(EnvKind::Uniform).unwrap());
        for n in 1..=4u64 {
            for y in (-(n as i64)..=n as i64).step_by(2) {
                let a = reconstruct(&env, n, y).unwrap();
                assert!((a - brute(&env, n, y)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn reconstruct_equals_dp() {
        for kind in [EnvKind::TwoPoint { a: 0.25 }, EnvKind::BernoulliHalf, EnvKind::DegenerateHalf] {
            for seed in 0..20 {
                let env = Environment::new(seed, make_spec(kind.clone()).unwrap());
                let d = evolve_density(&env, 8);
                for n in 0..=8u64 {
                    for y in -(n as i64)..=n as i64 {
                        let r = reconstruct(&env, n, y).unwrap();
                        assert!((r - d[n as usize].at(y)).abs() < 1e-10, "{kind:?} n={n} y={y}");
                    }
                }
            }
        }
        let env = Environment::new(1, make_spec(EnvKind::Uniform).unwrap());
        assert!(reconstruct(&env, 11, 1).is_err());
    }

    #[test]
    fn degenerate_has_no_higher_orders() {
        let env = Environment::new(1, make_spec(EnvKind::DegenerateHalf).unwrap());
        let o = chaos_orders(&env, 6, 2).unwrap();
        assert_eq!(o[0], srw_kernel(6, 2));
        assert!(o[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_moment_is_sum_of_order_variances() {
        let spec = make_spec(EnvKind::TwoPoint { a: 0.25 }).unwrap();
        let n = 4u64;
        let sites: Vec<(u64, i64)> = (0..n).flat_map(|i| (0..=i).map(move |k| (i, 2 * k as i64 - i as i64))).collect();
        let m = sites.len();
        for y in [-2i64, 0, 2, 4] {
            let (mut e2, mut orders) = (0.0, vec![0.0; n as usize + 1]);
            for mask in 0u64..(1 << m) {
                let table = sites.iter().enumerate().map(|(b, &z)| (z, if mask >> b & 1 == 1 { 0.75 } else { 0.25 })).collect();
                let env = Environment::tabulated(spec.clone(), table);
                let w = 1.0 / (1u64 << m) as f64;
                e2 += w * evolve_density(&env, n)[n as usize].at(y).powi(2);
                for (k, t) in chaos_orders(&env, n, y).unwrap().iter().enumerate() {
                    orders[k] += w * t * t;
                }
            }
            assert!((e2 - pointwise_second_moment(&spec, n, y)).abs() < 1e-15);
            assert!((e2 - orders.iter().sum::<f64>()).abs() < 1e-15);
            assert!((orders[1] - first_order_variance(spec.var, n, y)).abs() < 1e-15);
        }
    }

    #[test]
    fn lattice_point_has_parity() {
        let (n, y, _) = lattice_point(1024.0, 1.0, 0.0);
        assert_eq!(n, 1024);
        assert_eq!((y - n as i64).rem_euclid(2), 0);
    }
}
