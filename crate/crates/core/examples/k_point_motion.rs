//! Sticky k-point motion, the discrete Tanaka decomposition and the change-of-measure ledger.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rwre_lab::env::{make_spec, skewed_spec, EnvKind};
use rwre_lab::kpoint::{girsanov_ledger, simulate_path, ClusterSampler, KPointState, Mode};

fn main() -> Result<(), rwre_lab::Error> {
    let big_n = 256.0;
    let spec = make_spec(EnvKind::Beta { alpha: 1.0 })?;
    let sampler = ClusterSampler::new(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut state = KPointState::new(3);
    for _ in 0..big_n as u64 {
        state.step(Mode::Annealed(&sampler), &mut rng);
    }
    println!("3 walkers after {big_n} steps at {:?}", state.pos);
    println!("pairwise coincidence counts V: {} {} {}", state.v(0, 1), state.v(0, 2), state.v(1, 2));

    let path = simulate_path(&[0, 0], big_n as u64, Mode::Annealed(&sampler), &mut rng);
    let skew = skewed_spec(&spec, big_n)?;
    let ledger = girsanov_ledger(&path, big_n, &spec, &skew)?;
    let last = path.len() - 1;
    println!("two walkers: log m = {:.4}, D = {:.4}, G = {:.4}", ledger.log_m[last], ledger.d[last], ledger.g[last]);
    println!("largest |dG| while apart: {:.2e}", ledger.g_apart_max);
    Ok(())
}
