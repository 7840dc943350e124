//! Command line front end. Exit codes: 0 all gates pass, 1 some gate failed,
//! 2 bad arguments or configuration, 3 runtime error.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use super::{experiments, write_outcome, ExperimentConfig, Metadata};

#[derive(Debug, Parser)]
#[command(name = "rwre-lab", version, about = "Random walks in a space-time random environment at the N^{3/4} scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output root; each subcommand writes into `<out>/<subcommand>/`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Do not print the record table.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Quenched and tilted densities and the tail field.
    Density,
    /// First and second moments of the field by two estimators.
    Moments,
    /// Quadratic martingale field: increments, martingale checks, key estimate.
    Qmf,
    /// Chaos term statistics, truncation defect, orthogonality.
    Chaos,
    /// Maxima of many walkers against the Gumbel reference.
    Extremes,
    /// Noise field variance and the cross-variation.
    Noise,
    /// Exact identity and enumeration suite.
    Identities,
    /// Summarize the records of all experiments under the output root.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Density => "density",
            Command::Moments => "moments",
            Command::Qmf => "qmf",
            Command::Chaos => "chaos",
            Command::Extremes => "extremes",
            Command::Noise => "noise",
            Command::Identities => "identities",
            Command::Report => "report",
        }
    }
}

/// Resolve the configuration: file first, then flags on top.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

/// Parse arguments, run, write outputs, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 3;
        }
    };
    let name = cli.command.name();
    let start = Instant::now();
    let result = pool.install(|| {
        let outcome = experiments::run(name, &cfg, &cfg.out)?;
        let meta = Metadata::new(&cfg, &outcome, start.elapsed().as_secs_f64());
        write_outcome(&cfg.out.join(name), &outcome, &meta)?;
        Ok::<_, crate::Error>(outcome)
    });
    match result {
        Ok(outcome) => {
            if !cli.quiet {
                print!("{}", outcome.summary());
            }
            let failed = outcome.failures().count();
            println!("{name}: {} records, {failed} failed, outputs in {}", outcome.records.len(), cfg.out.join(name).display());
            i32::from(failed > 0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                crate::Error::Config(_) | crate::Error::Param(_) => 2,
                _ => 3,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_config_exits_two() {
        assert_eq!(main_with(["rwre-lab", "identities", "--config", "/nonexistent/x.toml"]), 2);
    }

    #[test]
    fn unknown_flag_exits_two() {
        assert_eq!(main_with(["rwre-lab", "density", "--bogus"]), 2);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 5\nthreads = 3\n").unwrap();
        let cli = Cli::try_parse_from(["rwre-lab", "qmf", "--config", p.to_str().unwrap(), "--seed", "9"]).unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.threads), (9, 3));
    }
}
