//! Exact enumeration over finite-support environments and walker moves at tiny sizes.
//!
//! A site `(s, y)` is only ever visited at time `s`, by the walkers that sit on it together,
//! so the weight of each visited site is drawn once, when its cluster moves. Unvisited sites
//! integrate out. Summing over every weight and move pattern along the way is therefore the
//! full expectation over (environment, paths).

use std::collections::HashMap;

use crate::env::{EnvSpec, Environment};
use crate::kpoint::clusters;
use crate::qkernel::{TestFunction, TiltedDensity};
use crate::Error;

pub const MAX_K: usize = 3;
pub const MAX_HORIZON: u64 = 4;

#[derive(Clone, Debug)]
pub struct EnumerationTask<'a> {
    pub spec: &'a EnvSpec,
    pub start: Vec<i64>,
    pub horizon: u64,
}

impl<'a> EnumerationTask<'a> {
    pub fn new(spec: &'a EnvSpec, k: usize, horizon: u64) -> Self {
        EnumerationTask { spec, start: vec![0; k], horizon }
    }

    fn check(&self) -> Result<&'a [(f64, f64)], Error> {
        if self.start.is_empty() || self.start.len() > MAX_K || self.horizon > MAX_HORIZON {
            return Err(Error::SizeCap(format!("k = {}, r = {} exceeds k <= {MAX_K}, r <= {MAX_HORIZON}", self.start.len(), self.horizon)));
        }
        self.spec.atoms().ok_or_else(|| Error::Param("enumeration needs a finite-support law".into()))
    }
}

/// All one-step outcomes from `pos`: `(moves, probability)`, merging weight choices.
pub fn one_step_law(spec: &EnvSpec, pos: &[i64]) -> Result<Vec<(Vec<i64>, f64)>, Error> {
    let atoms = spec.atoms().ok_or_else(|| Error::Param("enumeration needs a finite-support law".into()))?;
    let mut out = vec![(vec![-1i64; pos.len()], 1.0)];
    for (_, members) in clusters(pos) {
        let n = members.len();
        let mut next = Vec::with_capacity(out.len() << n);
        for (moves, p) in &out {
            for pat in 0..(1u32 << n) {
                let b = pat.count_ones() as i32;
                let q: f64 = atoms.iter().map(|&(w, pw)| pw * w.powi(b) * (1.0 - w).powi(n as i32 - b)).sum();
                let mut m = moves.clone();
                for (bit, &i) in members.iter().enumerate() {
                    if pat >> bit & 1 == 1 {
                        m[i] = 1;
                    }
                }
                next.push((m, p * q));
            }
        }
        out = next;
    }
    Ok(out)
}

/// `E[F(path)]` exactly, over all weight assignments on the visited cone and all move patterns.
pub fn exact_expectation<F: Fn(&[Vec<i64>]) -> f64>(task: &EnumerationTask, f: F) -> Result<f64, Error> {
    let atoms = task.check()?;
    let mut path = vec![task.start.clone()];
    let mut acc = 0.0;
    recurse(atoms, task.horizon, 1.0, &mut path, &f, &mut acc);
    Ok(acc)
}

/// Total enumerated probability mass; equals 1 up to rounding.
pub fn total_mass(task: &EnumerationTask) -> Result<f64, Error> {
    exact_expectation(task, |_| 1.0)
}

fn recurse<F: Fn(&[Vec<i64>]) -> f64>(atoms: &[(f64, f64)], left: u64, prob: f64, path: &mut Vec<Vec<i64>>, f: &F, acc: &mut f64) {
    if left == 0 {
        *acc += prob * f(path);
        return;
    }
    let pos = path.last().unwrap().clone();
    let cl = clusters(&pos);
    // branch over one weight per cluster, then over the moves of its members
    let mut weights = vec![0usize; cl.len()];
    loop {
        let pw = prob * weights.iter().map(|&a| atoms[a].1).product::<f64>();
        if pw > 0.0 {
            moves_given_weights(atoms, &cl, &weights, 0, pw, &mut vec![-1; pos.len()], &pos, left, path, f, acc);
        }
        // odometer over weight choices
        let mut c = 0;
        loop {
            if c == weights.len() {
                return;
            }
            weights[c] += 1;
            if weights[c] < atoms.len() {
                break;
            }
            weights[c] = 0;
            c += 1;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn moves_given_weights<F: Fn(&[Vec<i64>]) -> f64>(
    atoms: &[(f64, f64)],
    cl: &[(i64, Vec<usize>)],
    weights: &[usize],
    c: usize,
    prob: f64,
    moves: &mut Vec<i64>,
    pos: &[i64],
    left: u64,
    path: &mut Vec<Vec<i64>>,
    f: &F,
    acc: &mut f64,
) {
    if c == cl.len() {
        path.push(pos.iter().zip(moves.iter()).map(|(a, b)| a + b).collect());
        recurse(atoms, left - 1, prob, path, f, acc);
        path.pop();
        return;
    }
    let w = atoms[weights[c]].0;
    let members = &cl[c].1;
    for pat in 0..(1u32 << members.len()) {
        let mut p = prob;
        for (bit, &i) in members.iter().enumerate() {
            if pat >> bit & 1 == 1 {
                moves[i] = 1;
                p *= w;
            } else {
                moves[i] = -1;
                p *= 1.0 - w;
            }
        }
        if p > 0.0 {
            moves_given_weights(atoms, cl, weights, c + 1, p, moves, pos, left, path, f, acc);
        }
    }
}

/// `E[F(before, after) | walkers at pos]` over one step.
pub fn exact_conditional_mean<F: Fn(&[i64], &[i64]) -> f64>(spec: &EnvSpec, pos: &[i64], f: F) -> Result<f64, Error> {
    let mut acc = 0.0;
    for (m, p) in one_step_law(spec, pos)? {
        let after: Vec<i64> = pos.iter().zip(&m).map(|(a, b)| a + b).collect();
        acc += p * f(pos, &after);
    }
    Ok(acc)
}

/// `E[𝒰_N(r/N, φ)^k]` by running the tilted density in every environment on the cone.
pub fn field_moment_by_environments(spec: &EnvSpec, big_n: f64, steps: u64, phi: &TestFunction, k: i32) -> Result<f64, Error> {
    let atoms = spec.atoms().ok_or_else(|| Error::Param("enumeration needs a finite-support law".into()))?;
    let sites: Vec<(u64, i64)> = (0..steps).flat_map(|s| (0..=s).map(move |j| (s, 2 * j as i64 - s as i64))).collect();
    if sites.len() > 16 {
        return Err(Error::SizeCap(format!("{} cone sites", sites.len())));
    }
    let total = atoms.len().pow(sites.len() as u32);
    let mut acc = 0.0;
    for code in 0..total {
        let mut c = code;
        let mut table = HashMap::new();
        let mut p = 1.0;
        for &s in &sites {
            let (w, pw) = atoms[c % atoms.len()];
            c /= atoms.len();
            table.insert(s, w);
            p *= pw;
        }
        let env = Environment::tabulated(spec.clone(), table);
        let mut d = TiltedDensity::new(big_n);
        for _ in 0..steps {
            d.step(&env);
        }
        acc += p * d.pair(phi).powi(k);
    }
    Ok(acc)
}

/// The same moment as an exact k-point expectation of `∏_j C(x_j) φ(x_j)`.
pub fn field_moment_by_paths(spec: &EnvSpec, big_n: f64, steps: u64, phi: &TestFunction, k: usize) -> Result<f64, Error> {
    let task = EnumerationTask::new(spec, k, steps);
    let lambda = big_n.powf(-0.25);
    let t = steps as f64 / big_n;
    exact_expectation(&task, |path| {
        path.last()
            .unwrap()
            .iter()
            .map(|&y| {
                let x = (y as f64 - lambda * steps as f64) / big_n.sqrt();
                crate::qkernel::constant_log_c(big_n, t, x).exp() * phi.eval(x)
            })
            .product()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_spec, skewed_spec, EnvKind};
    use crate::kpoint::{exp_martingale, girsanov_ledger, tanaka, KPointState};

    fn two_point() -> EnvSpec {
        make_spec(EnvKind::TwoPoint { a: 0.25 }).unwrap()
    }

    #[test]
    fn mass_is_one() {
        for kind in [EnvKind::TwoPoint { a: 0.25 }, EnvKind::BernoulliHalf, EnvKind::DegenerateHalf] {
            let spec = make_spec(kind).unwrap();
            for k in 1..=3 {
                let m = total_mass(&EnumerationTask::new(&spec, k, 4)).unwrap();
                assert!((m - 1.0).abs() < 1e-14, "{m}");
            }
        }
    }

    #[test]
    fn caps_and_support() {
        let spec = two_point();
        assert!(total_mass(&EnumerationTask::new(&spec, 4, 2)).is_err());
        assert!(total_mass(&EnumerationTask::new(&spec, 2, 5)).is_err());
        let beta = make_spec(EnvKind::Uniform).unwrap();
        assert!(total_mass(&EnumerationTask::new(&beta, 1, 2)).is_err());
    }

    #[test]
    fn single_walker_drift() {
        let spec = skewed_spec(&two_point(), 16.0).unwrap();
        let task = EnumerationTask::new(&spec, 1, 4);
        let mu = spec.mean;
        let top = exact_expectation(&task, |p| if p[4][0] == 4 { 1.0 } else { 0.0 }).unwrap();
        assert!((top - mu.powi(4)).abs() < 1e-14);
        let mean = exact_expectation(&task, |p| p[4][0] as f64).unwrap();
        assert!((mean - 4.0 * (2.0 * mu - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn exponential_martingale_has_mean_one() {
        let spec = two_point();
        for k in 1..=3 {
            for r in 1..=4 {
                let task = EnumerationTask::new(&spec, k, r);
                let e = exact_expectation(&task, |p| exp_martingale(p, 0.3, &spec).unwrap()[r as usize].exp()).unwrap();
                assert!((e - 1.0).abs() < 1e-12, "k={k} r={r}: {e}");
            }
        }
    }

    #[test]
    fn tanaka_increment_is_centred() {
        let spec = two_point();
        for pos in [vec![0, 0], vec![0, 2], vec![3, 1], vec![0, 0, 2]] {
            let st = KPointState::at(pos.clone());
            let m0 = tanaka(&st, 0, 1, &spec);
            let e = exact_conditional_mean(&spec, &pos, |before, after| {
                let mut s = KPointState::at(before.to_vec());
                let mv: Vec<i64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
                s.apply(&mv);
                tanaka(&s, 0, 1, &spec) - m0
            })
            .unwrap();
            assert!(e.abs() < 1e-14, "{pos:?}: {e}");
        }
    }

    #[test]
    fn field_moment_two_ways() {
        let spec = two_point();
        let phi = TestFunction::gaussian(0.0, 1.0);
        for k in 1..=2 {
            let a = field_moment_by_environments(&spec, 4.0, 3, &phi, k as i32).unwrap();
            let b = field_moment_by_paths(&spec, 4.0, 3, &phi, k).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn change_of_measure_identity() {
        let base = two_point();
        let n = 16.0;
        let skew = skewed_spec(&base, n).unwrap();
        let lambda = n.powf(-0.25);
        let fs: [fn(&[Vec<i64>]) -> f64; 3] = [
            |p| if p[2][0] == p[2][1] { 1.0 } else { 0.0 },
            |p| (p.last().unwrap()[0] - p.last().unwrap()[1]).abs() as f64,
            |p| if p.last().unwrap()[0] > 0 { 1.0 } else { 0.0 },
        ];
        for r in 2..=4u64 {
            for f in fs {
                let lhs = exact_expectation(&EnumerationTask::new(&base, 2, r), |p| exp_martingale(p, lambda, &base).unwrap()[r as usize].exp() * f(p)).unwrap();
                let rhs = exact_expectation(&EnumerationTask::new(&skew, 2, r), |p| girsanov_ledger(p, n, &base, &skew).unwrap().g_tilde[r as usize].exp() * f(p)).unwrap();
                assert!((lhs - rhs).abs() < 1e-10, "r={r}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn one_step_law_sums_to_one() {
        let spec = two_point();
        for pos in [vec![0, 0, 0], vec![0, 0, 2], vec![0, 2, 4]] {
            let s: f64 = one_step_law(&spec, &pos).unwrap().iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}
