//! The rescaled environment as a space-time noise: variance of its pairing with a Gaussian.

use rwre_lab::dshe::{xi_exact_variance, xi_samples, SpaceTimeGaussian};
use rwre_lab::env::{make_spec, EnvKind};
use rwre_lab::stats::{sample_variance, variance_se, Estimate};

fn main() -> Result<(), rwre_lab::Error> {
    let spec = make_spec(EnvKind::Beta { alpha: 1.0 })?;
    let phi = SpaceTimeGaussian { t0: 0.5, st: 0.1, x0: 0.0, sx: 0.3 };
    let big_n = 256.0;
    let xs = xi_samples(&spec, big_n, &phi, 1.0, 4000, 1);
    let m = Estimate::of(&xs);
    println!("Xi_N(phi): mean {:.4} +- {:.4}", m.mean, m.se);
    println!(
        "variance {:.4} +- {:.4}; lattice value {:.4}; ||phi||^2 = {:.4}",
        sample_variance(&xs),
        variance_se(&xs),
        xi_exact_variance(big_n, &phi, 1.0),
        phi.l2_sq()
    );
    Ok(())
}
