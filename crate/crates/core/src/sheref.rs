//! Continuum references: heat kernel, noise coefficient, two-point moments, extremal law.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{PI, SQRT_2};

use crate::env::splitmix64;
use crate::stats::{gumbel_cdf, Estimate};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Contour,
    BridgeMc,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReferenceValue {
    pub value: f64,
    pub error: f64,
    pub method: Method,
}

pub fn heat_kernel(t: f64, x: f64) -> Result<f64, Error> {
    if !(t > 0.0) {
        return Err(Error::Param(format!("heat kernel needs t > 0, got {t}")));
    }
    Ok((-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt())
}

/// `γ = sqrt(8σ²/(1-4σ²))`.
pub fn gamma_coeff(var: f64) -> Result<f64, Error> {
    if !(0.0..0.25).contains(&var) {
        return Err(Error::Param(format!("σ² = {var} outside [0, 1/4)")));
    }
    Ok((8.0 * var / (1.0 - 4.0 * var)).sqrt())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContourConfig {
    pub r1: f64,
    pub r2: f64,
    /// Multiplier of the truncation height `12·max(1, α/√t)·(1+|x|+|y|)`.
    pub cutoff_scale: f64,
    pub nodes_per_period: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        ContourConfig { r1: -0.75, r2: 0.75, cutoff_scale: 12.0, nodes_per_period: 40.0 }
    }
}

/// Two-point moment `E[𝒰_t(x)𝒰_t(y)]` from the double contour integral.
/// Returns the real part with the quadrature bound; the imaginary part is the second value.
/// The integral represents the moment on the chamber `x <= y`; other orders are evaluated by symmetry.
pub fn two_point_contour(t: f64, x: f64, y: f64, alpha: f64, cfg: &ContourConfig) -> Result<(ReferenceValue, f64), Error> {
    let (x, y) = if x <= y { (x, y) } else { (y, x) };
    if !(alpha > 0.0 && t > 0.0) {
        return Err(Error::Param("contour needs α > 0 and t > 0".into()));
    }
    if !(cfg.r2 > cfg.r1 + 1.0) {
        return Err(Error::Param(format!("contours must satisfy r2 > r1 + 1 (got {}, {})", cfg.r1, cfg.r2)));
    }
    let a = t / (2.0 * alpha * alpha);
    let height = cfg.cutoff_scale * (alpha / t.sqrt()).max(1.0) * (1.0 + x.abs() + y.abs());
    // spacing: resolve the pole distance, the Gaussian width and the oscillation
    let gap = cfg.r2 - cfg.r1 - 1.0;
    let width = 1.0 / (2.0 * a).sqrt();
    let rate = (2.0 * a * cfg.r1 - x / alpha).abs().max((2.0 * a * cfg.r2 - y / alpha).abs()).max(1e-9);
    let h = (gap / 8.0).min(width / 8.0).min(2.0 * PI / rate / cfg.nodes_per_period);
    let m = (height / h).ceil() as i64;
    let line = |r: f64, pos: f64| -> Vec<(f64, Complex64)> {
        (-m..=m)
            .map(|i| {
                let u = i as f64 * h;
                let z = Complex64::new(r, u);
                (u, (a * z * z - pos * z / alpha).exp())
            })
            .collect()
    };
    let g1 = line(cfg.r1, x);
    let g2 = line(cfg.r2, y);
    let total: Complex64 = g1
        .par_iter()
        .map(|&(u, f1)| {
            let z1 = Complex64::new(cfg.r1, u);
            let mut acc = Complex64::new(0.0, 0.0);
            for &(v, f2) in &g2 {
                let w = Complex64::new(cfg.r2, v) - z1;
                acc += f2 * w / (w - 1.0);
            }
            f1 * acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let val = total * h * h / (4.0 * PI * PI * alpha * alpha);
    // truncation tail: Gaussian mass beyond the cutoff, relative to the on-axis magnitude
    let tail = (-a * height * height).exp() * (1.0 + 1.0 / gap);
    let bound = tail * (a * (cfg.r1 * cfg.r1 + cfg.r2 * cfg.r2) - (x * cfg.r1 + y * cfg.r2) / alpha).exp() / (a * alpha * alpha);
    Ok((ReferenceValue { value: val.re, error: bound.max(1e-15), method: Method::Contour }, val.im))
}

/// `∫∫ ξ_ε^a(x) ξ_ε^a(y) E[𝒰_t(x)𝒰_t(y)] dx dy`.
///
/// In `u = (x+y)/√2`, `v = (x-y)/√2` both the Gaussian weights and `p_t(x)p_t(y)` factor,
/// and the interaction depends on `x - y` only, so the pairing is
/// `p_{t+s}(√2 a) · ∫ p_t(v) p_s(v) F(√2|v|) dv` with `s = ε²/2` and
/// `F(d) = E[𝒰_t(-d/2)𝒰_t(d/2)] / p_t(d/2)²` taken from the contour.
pub fn two_point_paired_gaussian(t: f64, a: f64, eps: f64, alpha: f64) -> Result<ReferenceValue, Error> {
    if !(eps > 0.0) {
        return Err(Error::Param("pairing needs eps > 0".into()));
    }
    let cfg = ContourConfig::default();
    let s = eps * eps / 2.0;
    let sd = (t * s / (t + s)).sqrt();
    let half = 10.0 * sd;
    let nodes = 200;
    let mut err = 0.0;
    let mut f = |v: f64| -> Result<f64, Error> {
        let d = SQRT_2 * v.abs();
        let (m, _) = two_point_contour(t, -d / 2.0, d / 2.0, alpha, &cfg)?;
        let pd = heat_kernel(t, d / 2.0)?;
        let w = heat_kernel(t, v)? * heat_kernel(s, v)?;
        err += w * m.error / (pd * pd);
        Ok(w * m.value / (pd * pd))
    };
    // even integrand: Simpson on [0, half], doubled
    let h = half / nodes as f64;
    let mut acc = f(0.0)? + f(half)?;
    for i in 1..nodes {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h)?;
    }
    let inner = 2.0 * acc * h / 3.0;
    let outer = heat_kernel(t + s, SQRT_2 * a)?;
    Ok(ReferenceValue { value: outer * inner, error: outer * 2.0 * err * h, method: Method::Contour })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalTimeMode {
    /// Local time sampled exactly from its law given the Gaussian skeleton.
    BridgeExact,
    /// Band occupation at widths `δ` and `δ/2`, Richardson-extrapolated.
    Band,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BridgeConfig {
    pub paths: usize,
    pub dt: f64,
    pub delta: f64,
    pub seed: u64,
    pub mode: LocalTimeMode,
}

impl BridgeConfig {
    pub fn new(paths: usize, dt: f64, seed: u64) -> Self {
        BridgeConfig { paths, dt, delta: 0.04, seed, mode: LocalTimeMode::BridgeExact }
    }
}

/// Local time at 0 of a standard Brownian bridge from `a` to `b` over time `dt`, by inversion of
/// `P(L > l) = exp(-((|a|+|b|+l)² - (b-a)²) / 2dt)`.
pub fn bridge_local_time(a: f64, b: f64, dt: f64, u: f64) -> f64 {
    let s = a.abs() + b.abs();
    let r = ((b - a) * (b - a) - 2.0 * dt * u.ln()).sqrt();
    (r - s).max(0.0)
}

/// `E[∏ 𝒰_t(x_i)]` via Brownian bridges weighted by `exp(γ² Σ_{i<j} L_t^0(B^i - B^j))`.
pub fn she_moment_bridge_mc(t: f64, xs: &[f64], gamma: f64, cfg: &BridgeConfig) -> Result<ReferenceValue, Error> {
    let k = xs.len();
    if k == 0 || k > 4 {
        return Err(Error::Param("bridge moments need 1 <= k <= 4".into()));
    }
    if !(cfg.dt > 0.0 && cfg.delta > 0.0) {
        return Err(Error::Param("bridge step and band width must be positive".into()));
    }
    let mut base = 1.0;
    for &x in xs {
        base *= heat_kernel(t, x)?;
    }
    if k == 1 || gamma == 0.0 {
        return Ok(ReferenceValue { value: base, error: 0.0, method: Method::ClosedForm });
    }
    let steps = (t / cfg.dt).round().max(1.0) as usize;
    let dt = t / steps as f64;
    let g2 = gamma * gamma;
    let weights: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ (p as u64).wrapping_mul(0xA24B_AED4_963E_E407)));
            let sd = dt.sqrt();
            // free walks, pinned afterwards
            let mut paths = vec![vec![0.0f64; steps + 1]; k];
            for path in paths.iter_mut() {
                for s in 1..=steps {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    path[s] = path[s - 1] + sd * z;
                }
            }
            for (i, path) in paths.iter_mut().enumerate() {
                let end = path[steps];
                for (s, v) in path.iter_mut().enumerate() {
                    *v += (s as f64 / steps as f64) * (xs[i] - end);
                }
            }
            match cfg.mode {
                LocalTimeMode::BridgeExact => {
                    // B^i - B^j = √2 W, and the occupation density of √2 W at 0 is L^W / √2
                    let mut l = 0.0;
                    for i in 0..k {
                        for j in (i + 1)..k {
                            for s in 0..steps {
                                let a = (paths[i][s] - paths[j][s]) / SQRT_2;
                                let b = (paths[i][s + 1] - paths[j][s + 1]) / SQRT_2;
                                if a * b > 0.0 && 2.0 * a * b > 40.0 * dt {
                                    continue;
                                }
                                let u: f64 = rng.gen();
                                l += bridge_local_time(a, b, dt, 1.0 - u) / SQRT_2;
                            }
                        }
                    }
                    (g2 * l).exp()
                }
                LocalTimeMode::Band => {
                    let (mut l1, mut l2) = (0.0, 0.0);
                    for i in 0..k {
                        for j in (i + 1)..k {
                            let (mut o1, mut o2) = (0.0, 0.0);
                            for s in 0..steps {
                                let d = 0.5 * ((paths[i][s] - paths[j][s]) + (paths[i][s + 1] - paths[j][s + 1]));
                                if d.abs() <= cfg.delta {
                                    o1 += dt;
                                    if d.abs() <= cfg.delta / 2.0 {
                                        o2 += dt;
                                    }
                                }
                            }
                            l1 += o1 / (2.0 * cfg.delta);
                            l2 += o2 / cfg.delta;
                        }
                    }
                    2.0 * (g2 * l2).exp() - (g2 * l1).exp()
                }
            }
        })
        .collect();
    let e = Estimate::of(&weights);
    Ok(ReferenceValue { value: base * e.mean, error: base * e.se, method: Method::BridgeMc })
}

/// Centering and limit law of the extremes of `k(N)` walkers in one environment.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExtremeReference {
    pub c: f64,
    pub d: f64,
    pub t: f64,
    pub big_n: f64,
    pub r_n: f64,
    pub a_n: f64,
    /// `log k(N)` with `k(N) = ⌊exp(½c√N + dN^{1/4} + r_N)⌋`.
    pub log_k: f64,
    pub scale: f64,
    pub gumbel_shift: f64,
    /// `log 𝒰` of the deterministic (σ = 0) limit.
    pub log_u_heat: f64,
}

pub fn k_of_n(c: f64, d: f64, big_n: f64, r_n: f64) -> f64 {
    (0.5 * c * big_n.sqrt() + d * big_n.powf(0.25) + r_n).exp().floor()
}

pub fn extreme_reference(c: f64, d: f64, t: f64, big_n: f64, r_n: f64) -> Result<ExtremeReference, Error> {
    if !(c > 0.0 && t > 0.0) {
        return Err(Error::Param("extreme reference needs c, t > 0".into()));
    }
    let scale = (t / c).sqrt();
    let a_n = (c * t * big_n).sqrt() + d * scale * big_n.powf(0.25) + scale * (r_n - 0.25 * big_n.ln());
    let k = k_of_n(c, d, big_n, r_n);
    if k < 2.0 {
        return Err(Error::Param("k(N) < 2: a single walker has no extremal limit".into()));
    }
    Ok(ExtremeReference {
        c,
        d,
        t,
        big_n,
        r_n,
        a_n,
        log_k: k.ln(),
        scale,
        gumbel_shift: -c * c / (12.0 * t),
        log_u_heat: heat_kernel(c, d)?.ln(),
    })
}

impl ExtremeReference {
    /// CDF of `√(t/c)(G + shift + log 𝒰)` for a given `log 𝒰`.
    pub fn cdf_given(&self, z: f64, log_u: f64) -> f64 {
        gumbel_cdf(z / self.scale - self.gumbel_shift - log_u)
    }

    /// Deterministic-𝒰 reference CDF.
    pub fn cdf(&self, z: f64) -> f64 {
        self.cdf_given(z, self.log_u_heat)
    }

    pub fn sample(&self, u: f64, log_u: f64) -> f64 {
        self.scale * (-(-u.ln()).ln() + self.gumbel_shift + log_u)
    }

    /// Variance of the pure Gumbel part, `(t/c)π²/6`.
    pub fn gumbel_variance(&self) -> f64 {
        self.scale * self.scale * PI * PI / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::integrate;

    /// Laplace-transform form of the pole term, for cross-checking the contour quadrature.
    fn laplace_form(t: f64, x: f64, y: f64, alpha: f64) -> f64 {
        let (x, y) = (x.min(y), x.max(y));
        let p = |z: f64| heat_kernel(t, z).unwrap();
        p(x) * p(y) + integrate(|s| s.exp() * p(x - alpha * s) * p(y + alpha * s), 0.0, 40.0 * t.sqrt() / alpha + 40.0, 200_000)
    }

    #[test]
    fn heat_kernel_basics() {
        assert!((heat_kernel(1.0, 0.0).unwrap() - 0.3989422804014327).abs() < 1e-15);
        let m = integrate(|x| heat_kernel(0.7, x).unwrap(), -20.0, 20.0, 4000);
        assert!((m - 1.0).abs() < 1e-10);
        assert!((heat_kernel(4.0, 1.0).unwrap() - 0.5 * heat_kernel(1.0, 0.5).unwrap()).abs() < 1e-15);
        assert!(heat_kernel(0.0, 1.0).is_err());
    }

    #[test]
    fn gamma_examples() {
        for alpha in [0.5f64, 1.0, 2.0, 5.0] {
            let var = 1.0 / (4.0 * (2.0 * alpha + 1.0));
            assert!((gamma_coeff(var).unwrap().powi(2) - 1.0 / alpha).abs() < 1e-13);
        }
        assert_eq!(gamma_coeff(0.0).unwrap(), 0.0);
        assert!((gamma_coeff(0.125).unwrap().powi(2) - 2.0).abs() < 1e-14);
        assert!(gamma_coeff(0.25).is_err());
    }

    #[test]
    fn contour_real_symmetric_and_stable() {
        let cfg = ContourConfig::default();
        for &(t, x, y) in &[(1.0, 0.0, 0.0), (0.5, 0.3, -0.2), (2.0, 1.0, 0.4)] {
            let (v, im) = two_point_contour(t, x, y, 1.0, &cfg).unwrap();
            let (w, _) = two_point_contour(t, y, x, 1.0, &cfg).unwrap();
            assert!(im.abs() < 1e-8, "imag {im}");
            assert!((v.value - w.value).abs() < 1e-8);
            let shifted = ContourConfig { r1: -1.2, r2: 0.6, ..cfg };
            let (s, _) = two_point_contour(t, x, y, 1.0, &shifted).unwrap();
            assert!((v.value - s.value).abs() < 1e-7);
            assert!((v.value - laplace_form(t, x, y, 1.0)).abs() < 1e-8, "{} vs {}", v.value, laplace_form(t, x, y, 1.0));
        }
        let bad = ContourConfig { r1: 0.0, r2: 0.5, ..cfg };
        assert!(two_point_contour(1.0, 0.0, 0.0, 1.0, &bad).is_err());
    }

    #[test]
    fn bridge_edge_cases() {
        let cfg = BridgeConfig::new(10, 0.01, 1);
        let one = she_moment_bridge_mc(1.0, &[0.3], 1.0, &cfg).unwrap();
        assert_eq!(one.value, heat_kernel(1.0, 0.3).unwrap());
        let free = she_moment_bridge_mc(1.0, &[0.3, -0.1], 0.0, &cfg).unwrap();
        assert_eq!(free.value, heat_kernel(1.0, 0.3).unwrap() * heat_kernel(1.0, -0.1).unwrap());
    }

    #[test]
    fn extreme_constants() {
        assert_eq!(k_of_n(1.0, 0.0, 256.0, 0.0), 2980.0);
        let r = extreme_reference(1.0, 0.0, 1.0, 1e8, 0.0).unwrap();
        assert!((r.a_n / 1e4 - 1.0).abs() < 1e-3);
        assert!((r.gumbel_shift + 1.0 / 12.0).abs() < 1e-15);
        assert!(extreme_reference(1.0, 0.0, 1.0, 0.5, -5.0).is_err());
    }

    /// `p_t(x)p_t(y)·E[exp(γ² L)]` from the law of the local time of a Brownian bridge.
    fn local_time_form(t: f64, x: f64, y: f64, gamma: f64) -> f64 {
        let a = (x - y).abs() / SQRT_2;
        let th = gamma * gamma / SQRT_2;
        let tail = crate::stats::integrate(|l| th * (th * l - ((a + l).powi(2) - a * a) / (2.0 * t)).exp(), 0.0, 60.0, 20000);
        heat_kernel(t, x).unwrap() * heat_kernel(t, y).unwrap() * (1.0 + tail)
    }

    #[test]
    fn paired_target_counts_local_time_only_up_to_t() {
        let v = two_point_paired_gaussian(1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((v.value - 0.229_613_478_166_695).abs() < 1e-8, "{}", v.value);
        let naive = two_point_paired_gaussian(1.0, 0.0, 1.0, 1.5).unwrap();
        assert!((naive.value - 0.172_820_273_608_614).abs() < 1e-8, "{}", naive.value);
    }

    #[test]
    fn contour_matches_local_time_law() {
        let cfg = ContourConfig::default();
        for &(t, x, y) in &[(1.0, 0.0, 0.0), (1.0, -0.5, 0.5), (0.5, 0.3, -0.2), (2.0, 1.0, 0.4)] {
            let (v, _) = two_point_contour(t, x, y, 1.0, &cfg).unwrap();
            assert!((v.value - local_time_form(t, x, y, 1.0)).abs() < 1e-9, "{t} {x} {y}");
        }
    }

    #[test]
    fn bridge_exact_local_time_agrees_with_contour() {
        let cfg = BridgeConfig::new(20000, 0.01, 11);
        let b = she_moment_bridge_mc(1.0, &[-0.5, 0.5], 1.0, &cfg).unwrap();
        let (v, _) = two_point_contour(1.0, -0.5, 0.5, 1.0, &ContourConfig::default()).unwrap();
        assert!((b.value - v.value).abs() < 3.0 * b.error, "{} vs {} ± {}", b.value, v.value, b.error);
    }

    #[test]
    fn bridge_local_time_law() {
        // no local time when both ends are far on one side and u is not tiny
        assert_eq!(bridge_local_time(3.0, 3.0, 0.01, 0.5), 0.0);
        // from 0 to 0 the law is Rayleigh: P(L > l) = exp(-l²/2dt)
        let l = bridge_local_time(0.0, 0.0, 1.0, (-0.5f64).exp());
        assert!((l - 1.0).abs() < 1e-14);
    }
}
