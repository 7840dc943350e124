//! Martingale field, quadratic martingale field and the exact bracket decomposition along one environment.

use rwre_lab::dshe::{key_estimate_stat, run_checked};
use rwre_lab::env::{make_spec, EnvKind, Environment};
use rwre_lab::qkernel::TestFunction;

fn main() -> Result<(), rwre_lab::Error> {
    let big_n = 256.0;
    let spec = make_spec(EnvKind::Beta { alpha: 1.0 })?;
    let env = Environment::new(11, spec.clone());
    let phi = TestFunction::gaussian(0.0, 1.0);
    let run = run_checked(&env, big_n, big_n as u64, &[phi]);
    let tr = &run.traces[0];
    let end = tr.m.len() - 1;
    println!("sigma^2 = {:.5}, rho_N = {:.5}", run.sigma2, run.rho);
    println!("U(1,phi) = {:.5}  M(1,phi) = {:.5}  Q(1,phi) = {:.5}  W(1,phi) = {:.5}", tr.u[end], tr.m[end], tr.q[end], tr.w[end]);
    println!("martingale vs gradient form gap {:.1e}, bracket gap {:.1e}", tr.grad_gap, tr.mq_gap);
    println!("heat operator gap {:.1e}, mass gap {:.1e}", run.heat_gap.unwrap_or(f64::NAN), run.mass_gap.unwrap_or(f64::NAN));

    let ke = key_estimate_stat(&spec, 256.0, 1.0, 1.0, 0.5, 200, 5)?;
    println!("key estimate (N=256, eps=0.5): correct {:.4} +- {:.4}, naive {:.4} +- {:.4}", ke.correct.mean, ke.correct.se, ke.naive.mean, ke.naive.se);
    Ok(())
}
