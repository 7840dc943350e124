//! TOML experiment configuration. Every field has a default, so an empty file is valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dshe::SpaceTimeGaussian;
use crate::env::EnvKind;
use crate::qkernel::TestFunction;
use crate::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide. Outputs do not depend on it.
    pub threads: usize,
    pub out: PathBuf,
    /// Soft wall-clock budget; experiments stop between stages and flag the result partial.
    pub budget_seconds: Option<f64>,
    pub env: EnvKind,
    pub tolerance: Tolerances,
    pub density: DensityConfig,
    pub moments: MomentsConfig,
    pub qmf: QmfConfig,
    pub key: KeyConfig,
    pub chaos: ChaosConfig,
    pub extremes: ExtremesConfig,
    pub noise: NoiseConfig,
    pub identities: IdentitiesConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            seed: 1,
            threads: 0,
            out: PathBuf::from("out"),
            budget_seconds: None,
            env: EnvKind::Beta { alpha: 1.0 },
            tolerance: Tolerances::default(),
            density: DensityConfig::default(),
            moments: MomentsConfig::default(),
            qmf: QmfConfig::default(),
            key: KeyConfig::default(),
            chaos: ChaosConfig::default(),
            extremes: ExtremesConfig::default(),
            noise: NoiseConfig::default(),
            identities: IdentitiesConfig::default(),
        }
    }
}

/// Acceptance gates. SE multipliers apply to `|estimate - target|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub se_cross: f64,
    pub se_freq: f64,
    pub dp_mass: f64,
    pub tilted_raw: f64,
    pub heat: f64,
    pub grad_form: f64,
    pub mq: f64,
    pub chaos: f64,
    pub oracle: f64,
    pub g_apart: f64,
    pub ks: f64,
    pub xi_relative: f64,
    pub qmf_slope: [f64; 2],
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            se_cross: 3.0,
            se_freq: 4.0,
            dp_mass: 1e-12,
            tilted_raw: 1e-9,
            heat: 1e-12,
            grad_form: 1e-10,
            mq: 1e-10,
            chaos: 1e-10,
            oracle: 1e-10,
            g_apart: 1e-13,
            ks: 0.05,
            xi_relative: 0.02,
            qmf_slope: [0.8, 1.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub n: Vec<f64>,
    pub t: f64,
    /// Positions at which the tail field is tabulated.
    pub x: Vec<f64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig { n: vec![256.0], t: 1.0, x: (-8..=8).map(|i| i as f64 * 0.25).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub n: Vec<f64>,
    pub t: f64,
    pub k: Vec<usize>,
    pub dp_replicas: usize,
    /// Annealed replicas per entry of `k`; the last value is reused if shorter.
    pub annealed_replicas: Vec<usize>,
    pub test_functions: Vec<TestFunction>,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            n: vec![256.0],
            t: 1.0,
            k: vec![1, 2],
            dp_replicas: 2000,
            annealed_replicas: vec![10_000, 20_000],
            test_functions: vec![TestFunction::gaussian(0.0, 1.0), TestFunction::indicator(-1.0, 1.0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmfConfig {
    pub n: f64,
    pub t_max: f64,
    /// Smallest number of steps on the log grid of `t`.
    pub min_steps: u64,
    pub grid: usize,
    pub replicas: usize,
    pub phi: TestFunction,
    /// Size and replicas for the martingale checks on `M_N`.
    pub martingale_n: f64,
    pub martingale_replicas: usize,
}

impl Default for QmfConfig {
    fn default() -> Self {
        QmfConfig {
            n: 256.0,
            t_max: 1.0,
            min_steps: 8,
            grid: 6,
            replicas: 400,
            phi: TestFunction::gaussian(0.0, 1.0),
            martingale_n: 256.0,
            martingale_replicas: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyConfig {
    pub a: f64,
    pub t: f64,
    /// `(N, ε)` pairs, in the order the statistic should decrease.
    pub stairs: Vec<(f64, f64)>,
    pub replicas: usize,
}

impl Default for KeyConfig {
    fn default() -> Self {
        KeyConfig { a: 1.0, t: 1.0, stairs: vec![(64.0, 0.5), (256.0, 0.5)], replicas: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosConfig {
    pub n: Vec<f64>,
    pub t: f64,
    pub x: f64,
    pub k_max: usize,
    pub replicas: usize,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig { n: vec![64.0, 256.0], t: 1.0, x: 0.0, k_max: 2, replicas: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtremesConfig {
    pub c: f64,
    pub d: f64,
    pub t: f64,
    pub r_n: f64,
    /// Sizes for the calibration run, increasing.
    pub n: Vec<f64>,
    pub samples: usize,
    pub calibration_env: EnvKind,
    /// Second `d` for the shift check at the largest size.
    pub d_shift: f64,
    /// Size and number of environments for the random-environment variance check.
    pub random_n: f64,
    pub random_envs: usize,
}

impl Default for ExtremesConfig {
    fn default() -> Self {
        ExtremesConfig {
            c: 1.0,
            d: 0.0,
            t: 1.0,
            r_n: 0.0,
            n: vec![256.0, 1024.0],
            samples: 4000,
            calibration_env: EnvKind::DegenerateHalf,
            d_shift: 0.5,
            random_n: 256.0,
            random_envs: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub n: f64,
    pub t_max: f64,
    pub phi: SpaceTimeGaussian,
    pub xi_replicas: usize,
    pub cross_n: f64,
    pub cross_t: f64,
    pub cross_phi: TestFunction,
    pub cross_replicas: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            n: 256.0,
            t_max: 1.0,
            phi: SpaceTimeGaussian { t0: 0.5, st: 0.1, x0: 0.0, sx: 0.3 },
            xi_replicas: 10_000,
            cross_n: 256.0,
            cross_t: 1.0,
            cross_phi: TestFunction::gaussian(0.0, 1.0),
            cross_replicas: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentitiesConfig {
    pub envs: Vec<EnvKind>,
    pub n: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mass_steps: u64,
    pub chaos_envs: u64,
    pub chaos_steps: u64,
    pub oracle_horizon: u64,
    pub ledger_paths: usize,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        IdentitiesConfig {
            envs: vec![EnvKind::TwoPoint { a: 0.25 }, EnvKind::DegenerateHalf, EnvKind::BernoulliHalf],
            n: vec![16.0, 256.0],
            seeds: vec![1, 2, 3],
            mass_steps: 5000,
            chaos_envs: 100,
            chaos_steps: 8,
            oracle_horizon: 4,
            ledger_paths: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema {} is not supported (expected {SCHEMA_VERSION})", cfg.schema)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML with `threads` and `out` cleared, since neither affects results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        c.out = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.env = EnvKind::TwoPoint { a: 0.2 };
        c.moments.test_functions.push(TestFunction::SmoothBump { c: 0.5, r: 1.0 });
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn nested_sections_parse() {
        let c = ExperimentConfig::from_toml(
            r#"
            seed = 9
            [env]
            kind = "two-point"
            a = 0.25
            [moments]
            n = [64.0]
            test_functions = [{ kind = "gaussian-bump", a = 0.0, eps = 0.5 }]
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.env, EnvKind::TwoPoint { a: 0.25 });
        assert_eq!(c.moments.n, vec![64.0]);
        assert_eq!(c.moments.k, vec![1, 2]);
    }

    #[test]
    fn rejects_unknown_keys_and_schema() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("schema = 7").is_err());
    }

    #[test]
    fn hash_ignores_threads() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.threads = 8;
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
