//! Weight laws on [0,1] and reproducible space-time environments.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::Error;

/// Largest cluster size carried in moment tables by default.
pub const DEFAULT_KMAX: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvKind {
    DegenerateHalf,
    TwoPoint { a: f64 },
    Beta { alpha: f64 },
    Uniform,
    BernoulliHalf,
}

impl EnvKind {
    pub fn label(&self) -> String {
        match self {
            EnvKind::DegenerateHalf => "degenerate-half".into(),
            EnvKind::TwoPoint { a } => format!("two-point{{{a}}}"),
            EnvKind::Beta { alpha } => format!("beta{{{alpha}}}"),
            EnvKind::Uniform => "uniform".into(),
            EnvKind::BernoulliHalf => "bernoulli-half".into(),
        }
    }
}

/// Concrete law used for sampling and moments.
#[derive(Clone, Debug, PartialEq)]
pub enum Law {
    /// Finite support: (value, probability) pairs.
    Atoms(Vec<(f64, f64)>),
    /// `min(1, X + shift)` with `X ~ Beta(alpha, alpha)`.
    Beta { alpha: f64, shift: f64 },
}

#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub law: Law,
    pub mean: f64,
    pub var: f64,
    /// `moments[b][c] = E[ω^b (1-ω)^c]` for `b + c <= kmax`.
    pub moments: Vec<Vec<f64>>,
    pub kmax: usize,
    /// Shift applied by [`skewed_spec`], zero for base laws.
    pub shift: f64,
}

impl EnvSpec {
    pub fn m(&self, b: usize, c: usize) -> f64 {
        self.moments[b][c]
    }

    pub fn is_finite_support(&self) -> bool {
        matches!(self.law, Law::Atoms(_))
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match &self.law {
            Law::Atoms(a) => Some(a),
            _ => None,
        }
    }

    /// Inverse CDF at `u ∈ (0,1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match &self.law {
            Law::Atoms(atoms) => {
                let mut acc = 0.0;
                for &(v, p) in atoms {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                atoms.last().map(|a| a.0).unwrap_or(0.5)
            }
            Law::Beta { alpha, shift } => (beta_quantile(*alpha, u) + shift).min(1.0),
        }
    }

    /// `C(n,b) m[b][n-b]`, the probability that `b` of `n` coinciding walkers step up.
    pub fn cluster_prob(&self, n: usize, b: usize) -> f64 {
        binom(n, b) * self.moments[b][n - b]
    }
}

pub fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

pub fn make_spec(kind: EnvKind) -> Result<EnvSpec, Error> {
    make_spec_with(kind, DEFAULT_KMAX)
}

pub fn make_spec_with(kind: EnvKind, kmax: usize) -> Result<EnvSpec, Error> {
    let law = match &kind {
        EnvKind::DegenerateHalf => Law::Atoms(vec![(0.5, 1.0)]),
        EnvKind::TwoPoint { a } => {
            if !(0.0..=0.5).contains(a) || !a.is_finite() {
                return Err(Error::Param(format!("two-point a={a} must lie in [0, 1/2]")));
            }
            if *a == 0.0 {
                Law::Atoms(vec![(0.5, 1.0)])
            } else {
                Law::Atoms(vec![(0.5 - a, 0.5), (0.5 + a, 0.5)])
            }
        }
        EnvKind::BernoulliHalf => Law::Atoms(vec![(0.0, 0.5), (1.0, 0.5)]),
        EnvKind::Beta { alpha } => {
            if !(*alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::Param(format!("beta alpha={alpha} must be positive")));
            }
            Law::Beta { alpha: *alpha, shift: 0.0 }
        }
        EnvKind::Uniform => Law::Beta { alpha: 1.0, shift: 0.0 },
    };
    Ok(build(kind, law, kmax, 0.0))
}

fn build(kind: EnvKind, law: Law, kmax: usize, shift: f64) -> EnvSpec {
    let moments = moment_table(&law, kmax);
    let mean = moments[1][0];
    let var = moments[2][0] - mean * mean;
    EnvSpec { kind, law, mean, var: var.max(0.0), moments, kmax, shift }
}

fn moment_table(law: &Law, kmax: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; kmax + 1]; kmax + 1];
    for b in 0..=kmax {
        for c in 0..=(kmax - b) {
            m[b][c] = match law {
                Law::Atoms(atoms) => atoms.iter().map(|&(v, p)| p * v.powi(b as i32) * (1.0 - v).powi(c as i32)).sum(),
                Law::Beta { alpha, shift } => beta_mixed_moment(*alpha, *shift, b, c),
            };
        }
    }
    m
}

/// `E[min(1,X+s)^b (1-min(1,X+s))^c]` for symmetric Beta(α) `X`.
fn beta_mixed_moment(alpha: f64, s: f64, b: usize, c: usize) -> f64 {
    if s == 0.0 {
        // B(α+b, α+c)/B(α,α) as a product of ratios
        let mut r = 1.0;
        for i in 0..b {
            r *= alpha + i as f64;
        }
        for j in 0..c {
            r *= alpha + j as f64;
        }
        for l in 0..(b + c) {
            r /= 2.0 * alpha + l as f64;
        }
        return r;
    }
    let u = 1.0 - s;
    // ∫_0^u (x+s)^b (u-x)^c f(x) dx expanded in powers of x
    let mut total = 0.0;
    for i in 0..=b {
        for l in 0..=c {
            let coef = binom(b, i) * s.powi((b - i) as i32) * binom(c, l) * u.powi((c - l) as i32) * if l % 2 == 1 { -1.0 } else { 1.0 };
            total += coef * partial_moment(alpha, i + l, u);
        }
    }
    if c == 0 {
        total += 1.0 - beta_reg(alpha, alpha, u);
    }
    total
}

/// `∫_0^u x^p f_α(x) dx`.
fn partial_moment(alpha: f64, p: usize, u: f64) -> f64 {
    let full = (ln_beta(alpha + p as f64, alpha) - ln_beta(alpha, alpha)).exp();
    full * beta_reg(alpha + p as f64, alpha, u)
}

/// Inverse of the regularized incomplete beta `I_x(α,α)`, tolerance 1e-12.
pub fn beta_quantile(alpha: f64, u: f64) -> f64 {
    if alpha == 1.0 {
        return u;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let lnb = ln_beta(alpha, alpha);
    let mut x = 0.5;
    for _ in 0..200 {
        let f = beta_reg(alpha, alpha, x) - u;
        if f.abs() <= 1e-14 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.max(f64::MIN_POSITIVE) {
            break;
        }
        let pdf = ((alpha - 1.0) * (x.ln() + (1.0 - x).ln()) - lnb).exp();
        let nx = x - f / pdf;
        x = if nx > lo && nx < hi && nx.is_finite() { nx } else { 0.5 * (lo + hi) };
    }
    x
}

/// `ρ_N = e^{λ}/(2 cosh λ)` with `λ = N^{-1/4}`.
pub fn rho(n: f64) -> f64 {
    let l = n.powf(-0.25);
    1.0 / (1.0 + (-2.0 * l).exp())
}

/// Law of `min(1, ω + d_N)` with `d_N` chosen so the mean is `ρ_N`.
pub fn skewed_spec(spec: &EnvSpec, n: f64) -> Result<EnvSpec, Error> {
    if (spec.mean - 0.5).abs() > 1e-12 || spec.shift != 0.0 {
        return Err(Error::Param("skewing needs a mean-1/2 base law".into()));
    }
    let target = rho(n);
    let clip = |d: f64| -> Law {
        match &spec.law {
            Law::Atoms(atoms) => {
                let mut out: Vec<(f64, f64)> = Vec::new();
                for &(v, p) in atoms {
                    let w = (v + d).min(1.0);
                    match out.iter_mut().find(|e| e.0 == w) {
                        Some(e) => e.1 += p,
                        None => out.push((w, p)),
                    }
                }
                Law::Atoms(out)
            }
            Law::Beta { alpha, .. } => Law::Beta { alpha: *alpha, shift: d },
        }
    };
    let mean_at = |d: f64| -> f64 {
        match clip(d) {
            Law::Atoms(a) => a.iter().map(|&(v, p)| v * p).sum(),
            Law::Beta { alpha, shift } => beta_mixed_moment(alpha, shift, 1, 0),
        }
    };
    let (mut lo, mut hi) = (0.0, 0.5);
    if mean_at(hi) < target {
        return Err(Error::Param(format!(
            "no shift in [0,1/2] reaches mean {target:.6} for {}",
            spec.kind.label()
        )));
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let d = 0.5 * (lo + hi);
    Ok(build(spec.kind.clone(), clip(d), spec.kmax, d))
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter hash of `(seed, t, x)`.
#[inline]
pub fn site_hash(seed: u64, t: u64, x: i64) -> u64 {
    keyed_hash(seed_key(seed), t, x)
}

#[inline]
fn seed_key(seed: u64) -> u64 {
    splitmix64(seed ^ 0x6A09_E667_F3BC_C908)
}

#[inline]
fn keyed_hash(k: u64, t: u64, x: i64) -> u64 {
    splitmix64(k ^ splitmix64(t.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (x as u64).wrapping_mul(0xABC9_8388_FB8C_AC03)))
}

/// Uniform in the open interval (0,1) from 53 hash bits.
#[inline]
pub fn to_unit(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug)]
pub struct Environment {
    pub seed: u64,
    pub spec: EnvSpec,
    key: u64,
    sampler: Sampler,
}

#[derive(Clone, Debug)]
enum Sampler {
    Constant(f64),
    TwoAtoms { lo: f64, hi: f64, p_lo: f64 },
    General,
    Table(std::collections::HashMap<(u64, i64), f64>),
}

impl Environment {
    pub fn new(seed: u64, spec: EnvSpec) -> Self {
        let sampler = match &spec.law {
            Law::Atoms(a) if a.len() == 1 => Sampler::Constant(a[0].0),
            Law::Atoms(a) if a.len() == 2 => Sampler::TwoAtoms { lo: a[0].0, hi: a[1].0, p_lo: a[0].1 },
            _ => Sampler::General,
        };
        Environment { seed, spec, sampler, key: seed_key(seed) }
    }

    /// Explicit weights; unlisted sites carry the law's mean.
    pub fn tabulated(spec: EnvSpec, entries: std::collections::HashMap<(u64, i64), f64>) -> Self {
        Environment { seed: 0, spec, sampler: Sampler::Table(entries), key: seed_key(0) }
    }

    /// ω(t,x): a pure function of `(seed, t, x)`.
    #[inline]
    pub fn weight(&self, t: u64, x: i64) -> f64 {
        match &self.sampler {
            Sampler::Table(m) => m.get(&(t, x)).copied().unwrap_or(self.spec.mean),
            Sampler::Constant(v) => *v,
            Sampler::TwoAtoms { lo, hi, p_lo } => {
                let up = (to_unit(keyed_hash(self.key, t, x)) >= *p_lo) as u8 as f64;
                lo + (hi - lo) * up
            }
            Sampler::General => self.spec.quantile(to_unit(keyed_hash(self.key, t, x))),
        }
    }
}

pub fn weight(env: &Environment, t: u64, x: i64) -> f64 {
    env.weight(t, x)
}
