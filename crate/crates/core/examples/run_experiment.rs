//! Run an experiment from code and write its CSVs and metadata.

use std::time::Instant;

use rwre_lab::harness::{experiments, write_outcome, ExperimentConfig, Metadata};

fn main() -> Result<(), rwre_lab::Error> {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 3;
    cfg.moments.n = vec![128.0];
    cfg.moments.dp_replicas = 500;
    cfg.moments.annealed_replicas = vec![2000];
    let start = Instant::now();
    let outcome = experiments::moments(&cfg)?;
    print!("{}", outcome.summary());
    let dir = std::env::temp_dir().join("rwre-lab-example");
    let meta = Metadata::new(&cfg, &outcome, start.elapsed().as_secs_f64());
    write_outcome(&dir, &outcome, &meta)?;
    println!("wrote {}", dir.display());
    Ok(())
}
