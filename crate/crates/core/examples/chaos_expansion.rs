//! Polynomial chaos expansion of the quenched density and its reconstruction.

use rwre_lab::chaos::{chaos_orders, reconstruct, rescaled_term_stat};
use rwre_lab::env::{make_spec, EnvKind, Environment};
use rwre_lab::qkernel::final_density;

fn main() -> Result<(), rwre_lab::Error> {
    let spec = make_spec(EnvKind::TwoPoint { a: 0.25 })?;
    let env = Environment::new(9, spec.clone());
    let (n, y) = (8u64, 2i64);
    let orders = chaos_orders(&env, n, y)?;
    for (k, c) in orders.iter().enumerate() {
        println!("order {k}: {c:+.6e}");
    }
    let dp = final_density(&env, n).at(y);
    println!("sum of orders {:.15}, dynamic programming {dp:.15}", reconstruct(&env, n, y)?);

    let beta = make_spec(EnvKind::Beta { alpha: 1.0 })?;
    let st = rescaled_term_stat(&beta, 256.0, 1.0, 0.0, 1, 2000, 4);
    println!("rescaled first-order term at N=256: mean {:.4} +- {:.4}, variance {:.4}", st.mean.mean, st.mean.se, st.variance);
    Ok(())
}
