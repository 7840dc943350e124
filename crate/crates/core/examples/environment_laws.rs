//! Weight laws, their mixed moments, and a hashed environment.

use rwre_lab::env::{make_spec, rho, skewed_spec, EnvKind, Environment};

fn main() -> Result<(), rwre_lab::Error> {
    for kind in [EnvKind::DegenerateHalf, EnvKind::TwoPoint { a: 0.25 }, EnvKind::Beta { alpha: 1.0 }, EnvKind::Uniform, EnvKind::BernoulliHalf] {
        let spec = make_spec(kind.clone())?;
        println!("{:<18} mean={:.4} var={:.5} E[w(1-w)]={:.5} P(cluster of 3 has 2 up)={:.5}", kind.label(), spec.mean, spec.var, spec.m(1, 1), spec.cluster_prob(3, 2));
    }

    let big_n = 1024.0;
    let base = make_spec(EnvKind::Beta { alpha: 1.0 })?;
    let skew = skewed_spec(&base, big_n)?;
    println!("\nskewed law at N={big_n}: mean {:.6} (target rho_N = {:.6})", skew.mean, rho(big_n));

    let env = Environment::new(42, base);
    let row: Vec<String> = (-4..=4).map(|x| format!("{:.3}", env.weight(0, x))).collect();
    println!("weights at t=0, x=-4..4: {}", row.join(" "));
    println!("same seed, same site: {}", Environment::new(42, make_spec(EnvKind::Beta { alpha: 1.0 })?).weight(0, 0) == env.weight(0, 0));
    Ok(())
}
