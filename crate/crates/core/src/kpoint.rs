//! k-point motions in a shared environment, their intersection functionals,
//! the exponential martingale and the change of measure to the skewed law.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{binom, rho, skewed_spec, splitmix64, EnvSpec, Environment};
use crate::qkernel::{constant_log_c, log_cosh, TestFunction};
use crate::Error;

/// How coinciding walkers get their shared weight.
#[derive(Clone, Copy)]
pub enum Mode<'a> {
    /// Fresh weight per cluster per step, drawn from the law.
    Annealed(&'a ClusterSampler),
    /// Weights read from a fixed environment.
    Quenched(&'a Environment),
}

/// Per-size CDFs of the number of up-moves in a cluster.
#[derive(Clone, Debug)]
pub struct ClusterSampler {
    cdf: Vec<Vec<f64>>,
}

impl ClusterSampler {
    pub fn new(spec: &EnvSpec) -> Self {
        let cdf = (0..=spec.kmax)
            .map(|n| {
                let mut acc = 0.0;
                (0..=n)
                    .map(|b| {
                        acc += spec.cluster_prob(n, b);
                        acc
                    })
                    .collect()
            })
            .collect();
        ClusterSampler { cdf }
    }

    pub fn max_cluster(&self) -> usize {
        self.cdf.len() - 1
    }

    fn ups<R: Rng>(&self, n: usize, rng: &mut R) -> usize {
        let row = &self.cdf[n];
        let u: f64 = rng.gen::<f64>() * row[n];
        row.iter().position(|&c| u < c).unwrap_or(n)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KPointState {
    pub r: u64,
    pub pos: Vec<i64>,
    /// `V^{ij}` for `i < j`, row-major over pairs.
    pub v: Vec<u64>,
    /// Number of distinct sites at each past step `0..r`.
    pub distinct: Vec<usize>,
}

pub fn pair_index(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    i * (2 * k - i - 1) / 2 + (j - i - 1)
}

/// Coincidence clusters of a configuration: `(site, members)` sorted by site.
pub fn clusters(pos: &[i64]) -> Vec<(i64, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..pos.len()).collect();
    idx.sort_by_key(|&i| (pos[i], i));
    let mut out: Vec<(i64, Vec<usize>)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some((s, m)) if *s == pos[i] => m.push(i),
            _ => out.push((pos[i], vec![i])),
        }
    }
    out
}

pub fn cluster_sizes(pos: &[i64]) -> Vec<usize> {
    clusters(pos).into_iter().map(|(_, m)| m.len()).collect()
}

impl KPointState {
    pub fn new(k: usize) -> Self {
        Self::at(vec![0; k])
    }

    pub fn at(pos: Vec<i64>) -> Self {
        let k = pos.len();
        KPointState { r: 0, pos, v: vec![0; k * k.saturating_sub(1) / 2], distinct: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.pos.len()
    }

    pub fn v(&self, i: usize, j: usize) -> u64 {
        self.v[pair_index(self.k(), i, j)]
    }

    pub fn clusters(&self) -> Vec<(i64, Vec<usize>)> {
        clusters(&self.pos)
    }

    /// Moves the walkers by `moves` (each ±1) and updates counters.
    pub fn apply(&mut self, moves: &[i64]) {
        let k = self.k();
        let mut p = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                if self.pos[i] == self.pos[j] {
                    self.v[p] += 1;
                }
                p += 1;
            }
        }
        self.distinct.push(self.clusters().len());
        for (x, d) in self.pos.iter_mut().zip(moves) {
            *x += d;
        }
        self.r += 1;
    }

    /// One step; returns the moves taken.
    pub fn step<R: Rng>(&mut self, mode: Mode, rng: &mut R) -> Vec<i64> {
        let mut moves = vec![-1i64; self.k()];
        for (site, members) in self.clusters() {
            match mode {
                Mode::Annealed(cs) => {
                    let n = members.len();
                    let b = cs.ups(n, rng);
                    // a uniformly random b-subset of the cluster steps up
                    let mut m = members.clone();
                    for i in 0..b {
                        let j = rng.gen_range(i..n);
                        m.swap(i, j);
                        moves[m[i]] = 1;
                    }
                }
                Mode::Quenched(env) => {
                    let om = env.weight(self.r, site);
                    for &i in &members {
                        if rng.gen::<f64>() < om {
                            moves[i] = 1;
                        }
                    }
                }
            }
        }
        self.apply(&moves);
        moves
    }
}

/// Path of `steps` steps as a list of configurations (length `steps + 1`).
pub fn simulate_path<R: Rng>(start: &[i64], steps: u64, mode: Mode, rng: &mut R) -> Vec<Vec<i64>> {
    let mut s = KPointState::at(start.to_vec());
    let mut out = Vec::with_capacity(steps as usize + 1);
    out.push(s.pos.clone());
    for _ in 0..steps {
        s.step(mode, rng);
        out.push(s.pos.clone());
    }
    out
}

/// Tanaka martingale `4[μ(1-μ) - σ²]V^{ij} - |R^i - R^j|`.
pub fn tanaka(state: &KPointState, i: usize, j: usize, spec: &EnvSpec) -> f64 {
    let c = 4.0 * (spec.mean * (1.0 - spec.mean) - spec.var);
    c * state.v(i, j) as f64 - (state.pos[i] - state.pos[j]).abs() as f64
}

/// `log Σ_b C(n,b) m[b][n-b] e^{λ(2b-n)}` for one cluster.
pub fn cluster_log_mgf(n: usize, lambda: f64, spec: &EnvSpec) -> Result<f64, Error> {
    if n > spec.kmax {
        return Err(Error::ClusterTooLarge(n, spec.kmax));
    }
    let s: f64 = (0..=n).map(|b| spec.cluster_prob(n, b) * (lambda * (2.0 * b as f64 - n as f64)).exp()).sum();
    Ok(s.ln())
}

/// One-step log-MGF of `λ Σ_j ΔR^j` from a configuration with the given cluster sizes.
pub fn f_lambda(sizes: &[usize], lambda: f64, spec: &EnvSpec) -> Result<f64, Error> {
    sizes.iter().map(|&n| cluster_log_mgf(n, lambda, spec)).sum()
}

pub fn g_fn(lambda: f64, var: f64) -> f64 {
    let c2 = (2.0 * lambda).cosh();
    (0.5 * (1.0 + 4.0 * var) * c2 + 0.5 * (1.0 - 4.0 * var)).ln() - 2.0 * log_cosh(lambda)
}

/// `log 𝔪^λ(r)` along a path.
pub fn exp_martingale(path: &[Vec<i64>], lambda: f64, spec: &EnvSpec) -> Result<Vec<f64>, Error> {
    let mut out = Vec::with_capacity(path.len());
    let mut comp = Kahan::default();
    out.push(lambda * path[0].iter().sum::<i64>() as f64);
    for w in path.windows(2) {
        let f = f_lambda(&cluster_sizes(&w[0]), lambda, spec)?;
        let dr: i64 = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).sum();
        comp.add(lambda * dr as f64 - f);
        out.push(out[0] + comp.sum());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default)]
struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.s + y;
        self.c = (t - self.s) - y;
        self.s = t;
    }

    fn sum(&self) -> f64 {
        self.s
    }
}

/// Cumulative values of every process in the change of measure, indexed by step.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MartingaleLedger {
    pub log_m: Vec<f64>,
    pub tanaka: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub d: Vec<f64>,
    pub d_tilde: Vec<f64>,
    pub g: Vec<f64>,
    pub w: Vec<f64>,
    pub g_tilde: Vec<f64>,
    /// Largest `(Δ𝓖)² √N / Σ_{i<j} ΔV^{ij}` over collision steps.
    pub g_constant: f64,
    /// Largest `|Δ𝓖|` over steps with all walkers apart.
    pub g_apart_max: f64,
}

fn log_ratio(base: &EnvSpec, skew: &EnvSpec, b: usize, c: usize) -> f64 {
    (base.m(b, c) / skew.m(b, c)).ln()
}

/// Ledger of the change of measure from the base law at tilt `λ = N^{-1/4}`
/// to the skewed law, along a path.
pub fn girsanov_ledger(path: &[Vec<i64>], big_n: f64, base: &EnvSpec, skew: &EnvSpec) -> Result<MartingaleLedger, Error> {
    let k = path[0].len();
    let lambda = big_n.powf(-0.25);
    let drift = 2.0 * skew.mean - 1.0;
    let var = base.var;
    let mu = base.mean;
    let mut led = MartingaleLedger { tanaka: vec![Vec::with_capacity(path.len()); k * k.saturating_sub(1) / 2], ..Default::default() };
    let mut st = KPointState::at(path[0].clone());
    let push_tanaka = |led: &mut MartingaleLedger, st: &KPointState| {
        let mut p = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                let c = 4.0 * (mu * (1.0 - mu) - var);
                led.tanaka[p].push(c * st.v(i, j) as f64 - (st.pos[i] - st.pos[j]).abs() as f64);
                p += 1;
            }
        }
    };
    push_tanaka(&mut led, &st);
    let h0 = lambda * path[0].iter().sum::<i64>() as f64;
    for v in [&mut led.log_m, &mut led.h] {
        v.push(h0);
    }
    for v in [&mut led.h_tilde, &mut led.d, &mut led.d_tilde, &mut led.g, &mut led.w, &mut led.g_tilde] {
        v.push(0.0);
    }
    let (mut lm, mut h, mut ht, mut d) = (Kahan::default(), Kahan::default(), Kahan::default(), Kahan::default());
    let (mut dt, mut g, mut w, mut gt) = (Kahan::default(), Kahan::default(), Kahan::default(), Kahan::default());
    for step in path.windows(2) {
        let (from, to) = (&step[0], &step[1]);
        let cl = clusters(from);
        let mut f = 0.0;
        let mut dd = 0.0;
        let mut ed = 0.0;
        for (_, members) in &cl {
            let n = members.len();
            if n > base.kmax || n > skew.kmax {
                return Err(Error::ClusterTooLarge(n, base.kmax.min(skew.kmax)));
            }
            f += cluster_log_mgf(n, lambda, base)?;
            let b = members.iter().filter(|&&i| to[i] > from[i]).count();
            dd += log_ratio(base, skew, b, n - b);
            ed += (0..=n)
                .filter(|&bb| skew.m(bb, n - bb) > 0.0)
                .map(|bb| skew.cluster_prob(n, bb) * log_ratio(base, skew, bb, n - bb))
                .sum::<f64>();
        }
        let dr: i64 = to.iter().zip(from).map(|(a, b)| a - b).sum();
        let dh = lambda * dr as f64;
        let dht = lambda * (dr as f64 - k as f64 * drift);
        let ddt = dd - ed;
        let dg = dht + ddt;
        let dw = f - lambda * k as f64 * drift - ed;
        lm.add(dh - f);
        h.add(dh);
        ht.add(dht);
        d.add(dd);
        dt.add(ddt);
        g.add(dg);
        w.add(dw);
        gt.add(dg - dw);
        led.log_m.push(h0 + lm.sum());
        led.h.push(h0 + h.sum());
        led.h_tilde.push(ht.sum());
        led.d.push(d.sum());
        led.d_tilde.push(dt.sum());
        led.g.push(g.sum());
        led.w.push(w.sum());
        led.g_tilde.push(gt.sum());
        let before = st.v.clone();
        st.apply(&to.iter().zip(from).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dv: u64 = st.v.iter().zip(&before).map(|(a, b)| a - b).sum();
        if dv == 0 {
            led.g_apart_max = led.g_apart_max.max(dg.abs());
        } else {
            led.g_constant = led.g_constant.max(dg * dg * big_n.sqrt() / dv as f64);
        }
        push_tanaka(&mut led, &st);
    }
    Ok(led)
}

/// Rescaled processes at macroscopic time `t` (linear interpolation between steps).
#[derive(Clone, Debug, Serialize)]
pub struct Rescaled {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub tau: f64,
}

pub fn rescaled(path: &[Vec<i64>], big_n: f64, mean: f64, t: f64) -> Result<Rescaled, Error> {
    let s = big_n * t;
    let k = path[0].len();
    if s > (path.len() - 1) as f64 + 1e-9 {
        return Err(Error::Param(format!("path of {} steps is shorter than N t = {s}", path.len() - 1)));
    }
    let drift = 2.0 * mean - 1.0;
    let sq = big_n.sqrt();
    let at = |r: usize| -> Rescaled {
        let mut v = vec![0.0; k * k.saturating_sub(1) / 2];
        let mut tau = 0.0;
        for pos in &path[..r] {
            let mut p = 0;
            for i in 0..k {
                for j in (i + 1)..k {
                    if pos[i] == pos[j] {
                        v[p] += 1.0;
                    }
                    p += 1;
                }
            }
            if k >= 2 && clusters(pos).len() + 2 <= k {
                tau += 1.0;
            }
        }
        Rescaled {
            x: path[r].iter().map(|&y| (y as f64 - drift * r as f64) / sq).collect(),
            v: v.into_iter().map(|c| c / sq).collect(),
            tau: tau / sq,
        }
    };
    let lo = s.floor() as usize;
    let frac = s - lo as f64;
    let a = at(lo);
    if frac < 1e-12 {
        return Ok(a);
    }
    let b = at(lo + 1);
    let mix = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, w)| (1.0 - frac) * u + frac * w).collect();
    Ok(Rescaled { x: mix(&a.x, &b.x), v: mix(&a.v, &b.v), tau: (1.0 - frac) * a.tau + frac * b.tau })
}

/// Samples of `∏_j C(x_j) φ(x_j)` under the base law, simulated under the skewed law
/// and reweighted by the likelihood ratio `e^{𝓓(Nt)}`. Their mean is `E[𝒰_N(t,φ)^k]`.
pub fn annealed_moment_samples(
    base: &EnvSpec,
    big_n: f64,
    t: f64,
    phi: &TestFunction,
    k: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>, Error> {
    let skew = skewed_spec(base, big_n)?;
    if k > base.kmax {
        return Err(Error::ClusterTooLarge(k, base.kmax));
    }
    let steps = (big_n * t).round() as u64;
    let tt = steps as f64 / big_n;
    let lambda = big_n.powf(-0.25);
    let sampler = ClusterSampler::new(&skew);
    // log m/m* per (n, b)
    let lr: Vec<Vec<f64>> = (0..=k).map(|n| (0..=n).map(|b| log_ratio(base, &skew, b, n - b)).collect()).collect();
    let out = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (rep as u64).wrapping_mul(0x9E37_79B9)));
            let mut st = KPointState::new(k);
            let mut d = 0.0;
            for _ in 0..steps {
                let cl = st.clusters();
                let before = st.pos.clone();
                st.step(Mode::Annealed(&sampler), &mut rng);
                for (_, m) in &cl {
                    let b = m.iter().filter(|&&i| st.pos[i] > before[i]).count();
                    d += lr[m.len()][b];
                }
            }
            let mut logw = d;
            let mut val = 1.0;
            for &y in &st.pos {
                let x = (y as f64 - lambda * steps as f64) / big_n.sqrt();
                logw += constant_log_c(big_n, tt, x);
                val *= phi.eval(x);
            }
            if val == 0.0 {
                0.0
            } else {
                val * logw.exp()
            }
        })
        .collect();
    Ok(out)
}

/// `ρ_N` for convenience next to the tilt.
pub fn tilt_mean(big_n: f64) -> f64 {
    rho(big_n)
}

/// Exact one-step joint law of the moves of a cluster of `n` walkers: probability of each
/// specific up/down assignment with `b` ups.
pub fn assignment_prob(spec: &EnvSpec, n: usize, b: usize) -> f64 {
    spec.cluster_prob(n, b) / binom(n, b)
}
