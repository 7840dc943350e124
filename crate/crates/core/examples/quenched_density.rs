//! Exact quenched density by dynamic programming and the tilted density at the N^{3/4} scale.

use rwre_lab::env::{make_spec, EnvKind, Environment};
use rwre_lab::qkernel::{final_density, QuenchedMax, TestFunction, TiltedDensity};

fn main() -> Result<(), rwre_lab::Error> {
    let big_n = 1024.0;
    let steps = big_n as u64;
    let env = Environment::new(7, make_spec(EnvKind::Beta { alpha: 1.0 })?);

    let d = final_density(&env, steps);
    let mean: f64 = d.p.iter().enumerate().map(|(k, p)| p * d.site(k) as f64).sum();
    println!("after {steps} steps: mass {:.15}, quenched mean position {mean:.3}", d.mass());

    let mut tilted = TiltedDensity::new(big_n);
    for _ in 0..steps {
        tilted.step(&env);
    }
    let phi = TestFunction::gaussian(0.0, 1.0);
    println!("U_N(1, phi) = {:.5}; heat-kernel value {:.5}", tilted.pair(&phi), phi.heat_pairing(1.0));
    for x in [-1.0, 0.0, 1.0] {
        println!("tail field F_N(1, {x:+}) = {:.5}", tilted.tail_field(x));
    }

    let m = QuenchedMax::new(&d, 1e6);
    let median = m.sample(0.5);
    println!("median of the max of 1e6 walkers: site {median} (N^(3/4) = {:.1})", big_n.powf(0.75));
    Ok(())
}
