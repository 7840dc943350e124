//! Lattice stochastic heat equation carried by the tilted density: the
//! martingale field `M_N`, its quadratic variations, the quadratic martingale
//! field `Q_N`, the error term `𝓔_N` and the noise fields `Ξ_N`, `𝔚_N`.
//!
//! Everything is computed in one forward pass over the tilted DP. Sites are
//! indexed like [`TiltedDensity::w`], so the site of index `k` at time `r` is
//! `2k - r` and its macroscopic position is `N^{-1/2}(2k - r - λr)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{splitmix64, EnvSpec, Environment};
use crate::qkernel::{TestFunction, TiltedDensity};
use crate::stats::Estimate;
use crate::Error;

/// Cumulative fields for one test function; entry `r` is the value at time `r/N`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FieldTrace {
    /// `M_N` from the martingale-difference field `v_N`.
    pub m: Vec<f64>,
    /// `M_N` from the gradient form `Σ ∇_Nφ Z η`.
    pub m_grad: Vec<f64>,
    pub opt_qv: Vec<f64>,
    pub pred_qv: Vec<f64>,
    /// `Q_N(·, φ)`.
    pub q: Vec<f64>,
    /// `Q_N(·, φ²)`.
    pub q_sq: Vec<f64>,
    pub e: Vec<f64>,
    /// `𝔚_N(·, φ)`.
    pub w: Vec<f64>,
    /// Exact predictable cross-variation `⟨M_N(φ), 𝔚_N(φ)⟩`.
    pub cross_pred: Vec<f64>,
    /// Realized `Σ ΔM ΔW`.
    pub cross_opt: Vec<f64>,
    /// `𝒰_N(·, φ)`.
    pub u: Vec<f64>,
    /// Largest `|M - M_grad|` relative to the accumulated `Σ|φ v|`.
    pub grad_gap: f64,
    /// Largest relative gap in `⟨M⟩ = 𝓔 + (2ρ-1)²√N Q(φ²)`.
    pub mq_gap: f64,
    /// Largest `|Δ𝓔| / bound` over steps; `None` when `φ` has no finite `C¹` norm.
    pub ebound_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscreteSheRun {
    pub big_n: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub steps: u64,
    pub traces: Vec<FieldTrace>,
    /// Largest `|𝓛_N Z - v_N|` over all sites, relative to `max Z` of that step.
    /// Only filled by [`run_checked`].
    pub heat_gap: Option<f64>,
    /// Largest `|Σ P - 1|` with `P` recovered from the tilted density.
    pub mass_gap: Option<f64>,
}

impl DiscreteSheRun {
    pub fn time(&self, r: usize) -> f64 {
        r as f64 / self.big_n
    }
}

struct Acc {
    m: f64,
    m_abs: f64,
    m_grad: f64,
    opt: f64,
    pred: f64,
    q: f64,
    q_sq: f64,
    e: f64,
    w: f64,
    cross_pred: f64,
    cross_opt: f64,
}

/// Index range `[lo, hi]` of sites at time `r` whose position lies in `[a, b]`.
fn index_range(td: &TiltedDensity, a: f64, b: f64) -> Option<(usize, usize)> {
    let len = td.w.len();
    let shift = td.r as f64 * (1.0 + td.lambda);
    let sq = td.n.sqrt();
    let lo = if a.is_finite() { ((a * sq + shift) / 2.0).floor().max(0.0) } else { 0.0 };
    let hi = if b.is_finite() { ((b * sq + shift) / 2.0).ceil() } else { len as f64 };
    if hi < 0.0 || lo >= len as f64 {
        return None;
    }
    let hi = (hi as usize).min(len - 1);
    let lo = lo as usize;
    (lo <= hi).then_some((lo, hi))
}

/// `v_N` on the sites of time `r + 1`, from the weights of time `r`.
///
/// `omega[k]` is the weight at site `k` of `prev`. Returns the stencil form
/// and the discrete heat operator applied to `Z`; they agree up to rounding.
pub fn v_field(prev: &TiltedDensity, next: &TiltedDensity, omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let stencil = v_stencil(prev, omega);
    let rho = prev.rho;
    let w = &prev.w;
    let heat = (0..next.w.len())
        .map(|k| {
            // site 2k-r-1 at time r+1 has right neighbour k and left neighbour k-1 at time r
            let right = w.get(k).copied().unwrap_or(0.0);
            let left = if k == 0 { 0.0 } else { w[k - 1] };
            next.w[k] - rho * left - (1.0 - rho) * right
        })
        .collect();
    (stencil, heat)
}

fn v_stencil(prev: &TiltedDensity, omega: &[f64]) -> Vec<f64> {
    let rho = prev.rho;
    let mut out = Vec::with_capacity(prev.w.len() + 1);
    let mut left = 0.0;
    for (&w, &om) in prev.w.iter().zip(omega) {
        out.push((1.0 - 2.0 * om) * (1.0 - rho) * w + left);
        left = (2.0 * om - 1.0) * rho * w;
    }
    out.push(left);
    out
}

/// Run the tilted DP to time `steps + 1` and accumulate all fields up to `steps`.
pub fn run(env: &Environment, big_n: f64, steps: u64, phis: &[TestFunction]) -> DiscreteSheRun {
    run_with(env, big_n, steps, phis, false)
}

/// As [`run`], also checking the heat operator and mass at every site.
pub fn run_checked(env: &Environment, big_n: f64, steps: u64, phis: &[TestFunction]) -> DiscreteSheRun {
    run_with(env, big_n, steps, phis, true)
}

fn run_with(env: &Environment, big_n: f64, steps: u64, phis: &[TestFunction], checks: bool) -> DiscreteSheRun {
    let sigma2 = env.spec.var;
    let mut td = TiltedDensity::new(big_n);
    let rho = td.rho;
    let h = big_n.powf(-0.5);
    let n34 = big_n.powf(-0.75);
    let tilt = (2.0 * rho - 1.0).powi(2);
    let windows: Vec<(f64, f64)> = phis.iter().map(|p| p.window()).collect();
    let bound_coef: Vec<Option<(f64, f64)>> = phis
        .iter()
        .map(|p| {
            let c1 = p.c1_norm();
            c1.is_finite().then(|| (8.0 * n34 * sigma2 * c1 * c1, p.support_radius() + 1.0))
        })
        .collect();

    let mut acc: Vec<Acc> = phis
        .iter()
        .map(|_| Acc { m: 0.0, m_abs: 0.0, m_grad: 0.0, opt: 0.0, pred: 0.0, q: 0.0, q_sq: 0.0, e: 0.0, w: 0.0, cross_pred: 0.0, cross_opt: 0.0 })
        .collect();
    let mut traces: Vec<FieldTrace> = phis.iter().map(|_| FieldTrace::default()).collect();
    let (mut heat_gap, mut mass_gap) = (0.0f64, 0.0f64);
    let mut omega = Vec::new();
    let mut shifted = Vec::new();

    for _ in 0..=steps {
        let prev = td.clone();
        td.step_recording(env, &mut omega);
        let next = &td;

        let stencil = v_stencil(&prev, &omega);
        if checks {
            let (_, heat) = v_field(&prev, next, &omega);
            let zmax = prev.w.iter().cloned().fold(0.0, f64::max);
            for (s, hh) in stencil.iter().zip(&heat) {
                heat_gap = heat_gap.max((s - hh).abs() / zmax);
            }
            mass_gap = mass_gap.max((prev.raw_tail_from(0) - 1.0).abs());
        }

        for (i, phi) in phis.iter().enumerate() {
            let a = &mut acc[i];
            let tr = &mut traces[i];
            let (wa, wb) = windows[i];
            let mut dm = 0.0;
            let mut dm_abs = 0.0;
            let mut dg = 0.0;
            let mut dpred = 0.0;
            let mut dq = 0.0;
            let mut dq_sq = 0.0;
            let mut de = 0.0;
            let mut dw = 0.0;
            let mut dcross = 0.0;
            let mut u = 0.0;
            let mut local_sq = 0.0;
            if let Some((lo, hi)) = index_range(&prev, wa - 2.0 * h, wb + 2.0 * h) {
                // shifted[j] = φ(x_{lo+j} - h), so φ(x_k + h) = shifted[k - lo + 1]
                shifted.clear();
                for k in lo..=hi + 1 {
                    shifted.push(phi.eval(prev.x_of(k) - h));
                }
                for k in lo..=hi {
                    let z = prev.w[k];
                    let x = prev.x_of(k);
                    let f = phi.eval(x);
                    let grad = (1.0 - rho) * shifted[k - lo] - rho * shifted[k - lo + 1];
                    let eta = 1.0 - 2.0 * omega[k];
                    // v_N at site index k of time r+1 sits at position x_k - h of time r's frame
                    let pv = shifted[k - lo] * stencil[k];
                    dm += pv;
                    dm_abs += pv.abs();
                    dg += grad * z * eta;
                    dpred += (grad * z).powi(2);
                    dq += f * z * z;
                    dq_sq += f * f * z * z;
                    de += (grad * grad - tilt * f * f) * z * z;
                    dw += f * (2.0 * omega[k] - 1.0);
                    dcross += f * grad * z;
                    u += z * f;
                }
                // v_N at index hi+1 of time r+1 also feels site hi
                if hi + 1 < stencil.len() {
                    let pv = shifted[hi + 1 - lo] * stencil[hi + 1];
                    dm += pv;
                    dm_abs += pv.abs();
                }
                if let Some((_, radius)) = bound_coef[i] {
                    if let Some((blo, bhi)) = index_range(&prev, -radius, radius) {
                        local_sq = (blo..=bhi).filter(|&k| prev.x_of(k).abs() <= radius).map(|k| prev.w[k] * prev.w[k]).sum();
                    }
                }
            }
            let de = 4.0 * sigma2 * de;
            let dw = n34 * dw;
            a.m += dm;
            a.m_abs += dm_abs;
            a.m_grad += dg;
            a.opt += dg * dg;
            a.pred += 4.0 * sigma2 * dpred;
            a.q += 4.0 * sigma2 * h * dq;
            a.q_sq += 4.0 * sigma2 * h * dq_sq;
            a.e += de;
            a.w += dw;
            a.cross_pred += -4.0 * sigma2 * n34 * dcross;
            a.cross_opt += dg * dw;

            tr.grad_gap = tr.grad_gap.max((a.m - a.m_grad).abs() / a.m_abs.max(f64::MIN_POSITIVE));
            let rhs = a.e + tilt * big_n.sqrt() * a.q_sq;
            let scale = a.pred.abs().max(a.e.abs()).max(f64::MIN_POSITIVE);
            tr.mq_gap = tr.mq_gap.max((a.pred - rhs).abs() / scale);
            if let Some((coef, _)) = bound_coef[i] {
                let bound = coef * local_sq;
                let ratio = if de == 0.0 { 0.0 } else if bound > 0.0 { de.abs() / bound } else { f64::INFINITY };
                tr.ebound_ratio = Some(tr.ebound_ratio.unwrap_or(0.0).max(ratio));
            }
            tr.m.push(a.m);
            tr.m_grad.push(a.m_grad);
            tr.opt_qv.push(a.opt);
            tr.pred_qv.push(a.pred);
            tr.q.push(a.q);
            tr.q_sq.push(a.q_sq);
            tr.e.push(a.e);
            tr.w.push(a.w);
            tr.cross_pred.push(a.cross_pred);
            tr.cross_opt.push(a.cross_opt);
            tr.u.push(u);
        }
    }
    DiscreteSheRun { big_n, sigma2, rho, steps, traces, heat_gap: checks.then_some(heat_gap), mass_gap: checks.then_some(mass_gap) }
}

/// Space-time Gaussian `ϕ(t,x) = exp(-(t-t0)²/2s_t² - (x-x0)²/2s_x²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGaussian {
    pub t0: f64,
    pub st: f64,
    pub x0: f64,
    pub sx: f64,
}

impl SpaceTimeGaussian {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let (u, v) = ((t - self.t0) / self.st, (x - self.x0) / self.sx);
        (-0.5 * (u * u + v * v)).exp()
    }

    /// `‖ϕ‖²_{L²(ℝ²)} = π s_t s_x`.
    pub fn l2_sq(&self) -> f64 {
        std::f64::consts::PI * self.st * self.sx
    }
}

/// Sites entering `Ξ_N` inside the window of `ϕ` (width `cut` standard deviations).
fn xi_sites(big_n: f64, phi: &SpaceTimeGaussian, t_max: f64, cut: f64, mut visit: impl FnMut(u64, i64, f64)) {
    let lambda = big_n.powf(-0.25);
    let sq = big_n.sqrt();
    let r_lo = ((phi.t0 - cut * phi.st) * big_n).ceil().max(0.0) as u64;
    let r_hi = ((phi.t0 + cut * phi.st).min(t_max) * big_n).floor();
    if r_hi < 0.0 {
        return;
    }
    for r in r_lo..=r_hi as u64 {
        let t = r as f64 / big_n;
        let base = lambda * r as f64;
        let y_lo = (base + sq * (phi.x0 - cut * phi.sx)).ceil() as i64;
        let y_hi = (base + sq * (phi.x0 + cut * phi.sx)).floor() as i64;
        let mut y = y_lo;
        if (y - r as i64).rem_euclid(2) != 0 {
            y += 1;
        }
        while y <= y_hi {
            visit(r, y, phi.eval(t, (y as f64 - base) / sq));
            y += 2;
        }
    }
}

/// Window cut used for `Ξ_N`; `ϕ < e^{-40}` outside.
pub const XI_CUT: f64 = 9.0;

/// `Ξ_N(ϕ) = (2N^{3/2}σ²)^{-1/2} Σ (2ω - 1) ϕ(r/N, x)` over sites with `y ≡ r (mod 2)`, `r ≤ NT`.
pub fn noise_field_xi(env: &Environment, big_n: f64, phi: &SpaceTimeGaussian, t_max: f64) -> f64 {
    let sigma2 = env.spec.var;
    if sigma2 == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    xi_sites(big_n, phi, t_max, XI_CUT, |r, y, f| acc += (2.0 * env.weight(r, y) - 1.0) * f);
    acc / (2.0 * big_n.powf(1.5) * sigma2).sqrt()
}

/// Exact `Var Ξ_N(ϕ) = 2N^{-3/2} Σ ϕ²` on the same lattice.
pub fn xi_exact_variance(big_n: f64, phi: &SpaceTimeGaussian, t_max: f64) -> f64 {
    let mut acc = 0.0;
    xi_sites(big_n, phi, t_max, XI_CUT, |_, _, f| acc += f * f);
    2.0 * big_n.powf(-1.5) * acc
}

/// Mean square of `D = Q_N(t,ξ_ε^a) - c N^{-1} Σ_{r ≤ Nt} 𝒰_N(r/N, ξ^a_{ε√2})²`
/// for the correct coefficient `c = 8σ²/(1-4σ²)` and the naive `c = 8σ²`.
#[derive(Clone, Debug, Serialize)]
pub struct KeyEstimate {
    pub big_n: f64,
    pub t: f64,
    pub a: f64,
    pub eps: f64,
    pub correct: Estimate,
    pub naive: Estimate,
    /// Per-replica `naive - correct`, whose SE accounts for the shared environments.
    pub gap: Estimate,
}

pub fn key_estimate_samples(env_spec: &EnvSpec, big_n: f64, t: f64, a: f64, eps: f64, replicas: usize, seed: u64) -> Result<Vec<(f64, f64)>, Error> {
    if a == 0.0 {
        return Err(Error::Param("key estimate needs a != 0".into()));
    }
    let s2 = env_spec.var;
    if 4.0 * s2 >= 1.0 {
        return Err(Error::Param("key estimate needs sigma^2 < 1/4".into()));
    }
    let steps = (big_n * t).round() as u64;
    let phi_q = TestFunction::gaussian(a, eps);
    let phi_u = TestFunction::gaussian(a, eps * std::f64::consts::SQRT_2);
    let correct = 8.0 * s2 / (1.0 - 4.0 * s2);
    let naive = 8.0 * s2;
    Ok((0..replicas)
        .into_par_iter()
        .map(|rep| {
            let env = Environment::new(replica_seed(seed, rep as u64), env_spec.clone());
            let (q, sum_u2) = q_and_pairing_squares(&env, big_n, steps, &phi_q, &phi_u);
            let sum_u2 = sum_u2 / big_n;
            ((q - correct * sum_u2).powi(2), (q - naive * sum_u2).powi(2))
        })
        .collect())
}

/// `(Q_N(steps/N, φ_q), Σ_{r ≤ steps} 𝒰_N(r/N, φ_u)²)` without the other fields; equal to the
/// corresponding entries of [`run`].
pub fn q_and_pairing_squares(env: &Environment, big_n: f64, steps: u64, phi_q: &TestFunction, phi_u: &TestFunction) -> (f64, f64) {
    let mut td = TiltedDensity::new(big_n);
    let h = big_n.powf(-0.5);
    let c = 4.0 * env.spec.var * h;
    let (qa, qb) = phi_q.window();
    let (ua, ub) = phi_u.window();
    let (mut q, mut s) = (0.0, 0.0);
    let mut omega = Vec::new();
    for r in 0..=steps {
        let mut dq = 0.0;
        if let Some((lo, hi)) = index_range(&td, qa, qb) {
            for k in lo..=hi {
                let z = td.w[k];
                dq += phi_q.eval(td.x_of(k)) * z * z;
            }
        }
        let mut u = 0.0;
        if let Some((lo, hi)) = index_range(&td, ua, ub) {
            for k in lo..=hi {
                u += td.w[k] * phi_u.eval(td.x_of(k));
            }
        }
        q += c * dq;
        s += u * u;
        if r < steps {
            td.step_recording(env, &mut omega);
        }
    }
    (q, s)
}

pub fn key_estimate_stat(env_spec: &EnvSpec, big_n: f64, t: f64, a: f64, eps: f64, replicas: usize, seed: u64) -> Result<KeyEstimate, Error> {
    let s = key_estimate_samples(env_spec, big_n, t, a, eps, replicas, seed)?;
    let c: Vec<f64> = s.iter().map(|p| p.0).collect();
    let w: Vec<f64> = s.iter().map(|p| p.1).collect();
    let g: Vec<f64> = s.iter().map(|p| p.1 - p.0).collect();
    Ok(KeyEstimate { big_n, t, a, eps, correct: Estimate::of(&c), naive: Estimate::of(&w), gap: Estimate::of(&g) })
}

/// Environment seed of replica `rep`.
pub fn replica_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(seed ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `Ξ_N(ϕ)` over independent environments.
pub fn xi_samples(env_spec: &EnvSpec, big_n: f64, phi: &SpaceTimeGaussian, t_max: f64, replicas: usize, seed: u64) -> Vec<f64> {
    (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let env = Environment::new(replica_seed(seed, rep as u64), env_spec.clone());
            noise_field_xi(&env, big_n, phi, t_max)
        })
        .collect()
}

/// Random environment for property tests: weights drawn from the law, tabulated.
pub fn random_tabulated(spec: &EnvSpec, steps: u64, seed: u64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = std::collections::HashMap::new();
    for t in 0..=steps {
        for x in -(t as i64)..=t as i64 {
            m.insert((t, x), spec.quantile(rng.gen::<f64>()));
        }
    }
    Environment::tabulated(spec.clone(), m)
}
