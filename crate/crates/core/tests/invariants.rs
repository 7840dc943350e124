use proptest::prelude::*;

use rwre_lab::env::{beta_quantile, make_spec, EnvKind, Environment};
use rwre_lab::harness::{Gate, ResultRecord};
use rwre_lab::qkernel::{final_density, QuenchedMax, TestFunction, TiltedDensity};

fn env_kind() -> impl Strategy<Value = EnvKind> {
    prop_oneof![
        Just(EnvKind::DegenerateHalf),
        (0.05f64..0.45).prop_map(|a| EnvKind::TwoPoint { a }),
        (0.3f64..4.0).prop_map(|alpha| EnvKind::Beta { alpha }),
        Just(EnvKind::Uniform),
        Just(EnvKind::BernoulliHalf),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn density_is_a_probability(kind in env_kind(), seed in any::<u64>(), steps in 0u64..300) {
        let env = Environment::new(seed, make_spec(kind).unwrap());
        let d = final_density(&env, steps);
        prop_assert!(d.p.iter().all(|&p| p >= 0.0));
        prop_assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_are_reproducible_and_in_range(kind in env_kind(), seed in any::<u64>(), t in 0u64..10_000, x in -10_000i64..10_000) {
        let spec = make_spec(kind).unwrap();
        let (a, b) = (Environment::new(seed, spec.clone()), Environment::new(seed, spec));
        let w = a.weight(t, x);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert_eq!(w.to_bits(), b.weight(t, x).to_bits());
    }

    #[test]
    fn tilted_tail_recovers_unit_mass(kind in env_kind(), seed in any::<u64>(), steps in 1u64..200) {
        let env = Environment::new(seed, make_spec(kind).unwrap());
        let mut tilted = TiltedDensity::new(256.0);
        for _ in 0..steps {
            tilted.step(&env);
        }
        prop_assert!((tilted.raw_tail_from(0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quenched_max_cdf_is_monotone(seed in any::<u64>(), steps in 1u64..120, log_k in 0.0f64..30.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let env = Environment::new(seed, make_spec(EnvKind::Beta { alpha: 1.0 }).unwrap());
        let m = QuenchedMax::new(&final_density(&env, steps), log_k.exp());
        prop_assert!(m.cdf.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((m.cdf.last().unwrap() - 1.0).abs() < 1e-12);
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        prop_assert!(m.sample(lo) <= m.sample(hi));
    }

    #[test]
    fn beta_quantile_is_monotone(alpha in 0.2f64..5.0, u in 0.001f64..0.999, du in 0.0f64..0.5) {
        let v = (u + du).min(0.999);
        prop_assert!(beta_quantile(alpha, u) <= beta_quantile(alpha, v) + 1e-12);
    }

    #[test]
    fn heat_pairing_of_a_constant_is_the_constant(value in -5.0f64..5.0, t in 0.05f64..4.0) {
        let phi = TestFunction::Constant { value };
        prop_assert!((phi.heat_pairing(t) - value).abs() < 1e-9 * (1.0 + value.abs()));
    }

    #[test]
    fn gates_agree_with_their_rule(value in -10.0f64..10.0, target in -10.0f64..10.0, se in 0.0f64..3.0, k in 0.5f64..5.0) {
        let d = value - target;
        let r = |g| ResultRecord::new("x", "y", "", value).se(se).target(target).gate(g).pass;
        prop_assert_eq!(r(Gate::Se { k }), Some(d.abs() <= k * se));
        prop_assert_eq!(r(Gate::SeApart { k }), Some(d.abs() > k * se));
        prop_assert_eq!(r(Gate::Se { k }) == Some(true), r(Gate::SeApart { k }) == Some(false));
        prop_assert_eq!(r(Gate::Exceeds { k }), Some(d >= k * se));
        prop_assert_eq!(r(Gate::AtMost), Some(value <= target));
        prop_assert_eq!(r(Gate::Report), None);
    }
}
