//! Simulation laboratory for random walks in a space-time random environment
//! observed at the moderate-deviation scale `N^{3/4}`.
//!
//! Modules, bottom up: [`env`] weight laws and counter-hashed environments,
//! [`qkernel`] exact quenched densities, [`kpoint`] k-point motions and the
//! tilting ledger, [`dshe`] the discrete stochastic heat equation fields,
//! [`chaos`] the polynomial chaos expansion, [`sheref`] continuum references,
//! [`oracle`] exact enumeration at tiny sizes, and [`harness`] experiments and CLI.

pub mod chaos;
pub mod dshe;
pub mod env;
pub mod harness;
pub mod kpoint;
pub mod oracle;
pub mod qkernel;
pub mod sheref;
pub mod stats;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("cluster of size {0} exceeds the moment table (k_max = {1})")]
    ClusterTooLarge(usize, usize),
    #[error("enumeration too large: {0}")]
    SizeCap(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub use env::{make_spec, EnvKind, EnvSpec, Environment};
pub use qkernel::{TestFunction, TiltedDensity};
