//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --release --test acceptance -- AC3 AC7`.
//! Criteria listed in `KNOWN_FAILING` are reported but do not fail the binary;
//! the README explains each one.

use std::path::Path;
use std::time::Instant;

use rwre_lab::harness::{cli, experiments, ExperimentConfig, Outcome, ResultRecord};
use rwre_lab::{EnvKind, TestFunction};

const KNOWN_FAILING: &[&str] = &["AC5"];

struct Verdict {
    pass: bool,
    detail: String,
}

fn base() -> ExperimentConfig {
    ExperimentConfig { seed: 20240611, ..ExperimentConfig::default() }
}

fn describe(r: &ResultRecord) -> String {
    let mut s = format!("{} {}={:.4e}", r.statistic, r.inputs, r.value);
    if let Some(se) = r.se {
        s += &format!(" se={se:.2e}");
    }
    if let Some(t) = r.target {
        s += &format!(" target={t:.4e}");
    }
    s += &format!(" {}", r.gate.label());
    if r.failed() {
        s += " FAILED";
    }
    s
}

/// Every gated record whose statistic is in `stats` must pass, and at least one must exist.
fn require(o: &Outcome, stats: &[&str]) -> Verdict {
    let picked: Vec<&ResultRecord> = o.records.iter().filter(|r| stats.contains(&r.statistic.as_str())).collect();
    let missing: Vec<&&str> = stats.iter().filter(|s| !picked.iter().any(|r| r.statistic == **s)).collect();
    let pass = missing.is_empty() && picked.iter().all(|r| !r.failed()) && !o.partial;
    let mut lines: Vec<String> = picked.iter().map(|r| describe(r)).collect();
    if !missing.is_empty() {
        lines.push(format!("missing records: {missing:?}"));
    }
    Verdict { pass, detail: lines.join("\n      ") }
}

fn ac1_ac2() -> (Verdict, Verdict) {
    let start = Instant::now();
    let o = experiments::identities(&base()).expect("identity suite");
    let secs = start.elapsed().as_secs_f64();
    let mut exact = require(
        &o,
        &[
            "dp_mass",
            "tilted_raw",
            "stencil_vs_heat_operator",
            "martingale_vs_gradient_form",
            "bracket_decomposition",
            "error_term_bound_ratio",
            "chaos_reconstruction",
        ],
    );
    let mut oracle = require(
        &o,
        &["enumeration_mass", "exponential_martingale_mean", "tanaka_conditional_mean", "change_of_measure", "field_moment_two_ways", "g_increment_apart"],
    );
    for v in [&mut exact, &mut oracle] {
        v.pass &= secs < 60.0;
        v.detail += &format!("\n      shared wall time {secs:.1}s (limit 60s)");
    }
    (exact, oracle)
}

fn ac3() -> Verdict {
    let mut cfg = base();
    cfg.moments.n = vec![1024.0];
    cfg.moments.k = vec![1];
    cfg.moments.dp_replicas = 10_000;
    cfg.moments.annealed_replicas = vec![10_000];
    cfg.moments.test_functions = vec![TestFunction::gaussian(0.0, 1.0), TestFunction::indicator(-1.0, 1.0)];
    let o = experiments::moments(&cfg).expect("moments");
    require(&o, &["moment_dp", "moment_annealed", "moment_dp_minus_annealed"])
}

fn ac4() -> Verdict {
    let mut cfg = base();
    cfg.env = EnvKind::Beta { alpha: 1.0 };
    cfg.moments.n = vec![1024.0];
    cfg.moments.k = vec![2];
    cfg.moments.dp_replicas = 2_000;
    cfg.moments.annealed_replicas = vec![100_000];
    cfg.moments.test_functions = vec![TestFunction::gaussian(0.0, 1.0)];
    let o = experiments::moments(&cfg).expect("moments");
    require(&o, &["moment_annealed", "naive_target_excluded", "moment_dp", "moment_dp_minus_annealed"])
}

fn ac5() -> Verdict {
    let mut cfg = base();
    cfg.qmf.n = 1024.0;
    cfg.qmf.min_steps = 16;
    cfg.qmf.grid = 7;
    cfg.qmf.replicas = 2_000;
    cfg.key.stairs.clear();
    let o = experiments::qmf(&cfg).expect("qmf");
    let mut v = require(&o, &["increment_slope"]);
    if let Some(t) = o.table("qmf_increments") {
        let (ts, ms) = (t.column("t"), t.column("mean_sq_increment"));
        let pts: Vec<String> = ts.iter().zip(&ms).map(|(t, m)| format!("({t:.4}, {m:.3e})")).collect();
        v.detail += &format!("\n      increments {}", pts.join(" "));
    }
    v
}

fn ac6() -> Verdict {
    let mut cfg = base();
    cfg.key.stairs = vec![(256.0, 0.5), (1024.0, 0.5), (1024.0, 0.25)];
    cfg.key.replicas = 4_000;
    cfg.qmf.grid = 2;
    cfg.qmf.replicas = 2;
    cfg.qmf.martingale_replicas = 2;
    let o = experiments::qmf(&cfg).expect("qmf");
    let mut v = require(&o, &["key_step_change", "key_naive_minus_correct"]);
    let steps = o.records.iter().filter(|r| r.statistic == "key_step_change").count();
    v.pass &= steps == 2;
    for r in o.records.iter().filter(|r| r.statistic == "key_correct") {
        v.detail += &format!("\n      {}", describe(r));
    }
    v
}

fn ac7() -> Verdict {
    let mut cfg = base();
    cfg.env = EnvKind::Beta { alpha: 1.0 };
    cfg.extremes.n = vec![256.0, 1024.0, 4096.0];
    cfg.extremes.samples = 10_000;
    cfg.extremes.random_n = 1024.0;
    cfg.extremes.random_envs = 2_000;
    let o = experiments::extremes(&cfg).expect("extremes");
    let mut v = require(&o, &["ks_distance", "ks_change", "random_env_variance"]);
    for r in o.records.iter().filter(|r| r.statistic.starts_with("d_shift")) {
        v.detail += &format!("\n      (reported) {}", describe(r));
    }
    v
}

fn ac8() -> Verdict {
    let mut cfg = base();
    cfg.noise.n = 1024.0;
    cfg.noise.xi_replicas = 40_000;
    cfg.noise.cross_n = 1024.0;
    cfg.noise.cross_replicas = 500;
    let o = experiments::noise(&cfg).expect("noise");
    require(&o, &["xi_variance_ratio", "cross_realized_minus_predictable"])
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn ac9() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg_path = tmp.path().join("det.toml");
    std::fs::write(
        &cfg_path,
        "seed = 77\n\
         [moments]\nn = [64.0]\ndp_replicas = 300\nannealed_replicas = [500, 500]\n\
         [qmf]\nn = 64.0\nreplicas = 100\nmartingale_n = 64.0\nmartingale_replicas = 100\n\
         [key]\nstairs = [[64.0, 0.5]]\nreplicas = 100\n\
         [chaos]\nn = [64.0]\nreplicas = 300\n\
         [extremes]\nn = [256.0]\nsamples = 500\nrandom_n = 256.0\nrandom_envs = 100\n\
         [noise]\nn = 64.0\nxi_replicas = 500\ncross_n = 64.0\ncross_replicas = 50\n",
    )
    .unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for exp in ["density", "moments", "qmf", "chaos", "extremes", "noise", "identities"] {
        let mut runs = Vec::new();
        for threads in ["1", "3"] {
            let out = tmp.path().join(format!("t{threads}"));
            let code = cli::main_with(["rwre-lab", exp, "-q", "--config", cfg_path.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap()]);
            pass &= code != 2 && code != 3;
            runs.push(csv_bytes(&out.join(exp)));
        }
        let same = !runs[0].is_empty() && runs[0] == runs[1];
        pass &= same;
        lines.push(format!("{exp}: {} csv files, identical across 1 and 3 threads: {same}", runs[0].len()));
    }
    Verdict { pass, detail: lines.join("\n      ") }
}

type Entry = (&'static str, &'static str, Verdict, f64);

fn emit(verdicts: &mut Vec<Entry>, id: &'static str, title: &'static str, v: Verdict, secs: f64) {
    println!("{} {id} {title} ({secs:.0}s)\n      {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    verdicts.push((id, title, v, secs));
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| f == id);
    let mut verdicts: Vec<Entry> = Vec::new();
    if wanted("AC1") || wanted("AC2") {
        let start = Instant::now();
        let (a, b) = ac1_ac2();
        let secs = start.elapsed().as_secs_f64();
        for (id, title, v) in [("AC1", "exact identities", a), ("AC2", "enumeration oracle identities", b)] {
            if wanted(id) {
                emit(&mut verdicts, id, title, v, secs);
            }
        }
    }
    let timed: [(&str, &str, fn() -> Verdict); 7] = [
        ("AC3", "first moment, two estimators vs heat kernel", ac3),
        ("AC4", "second moment vs contour target, naive coefficient excluded", ac4),
        ("AC5", "QMF increment exponent in [0.8, 1.2]", ac5),
        ("AC6", "key estimate staircase and naive plateau", ac6),
        ("AC7", "extremes calibration and random-environment variance", ac7),
        ("AC8", "noise field variance and cross-variation", ac8),
        ("AC9", "determinism across thread counts", ac9),
    ];
    for (id, title, f) in timed {
        if wanted(id) {
            let start = Instant::now();
            let v = f();
            emit(&mut verdicts, id, title, v, start.elapsed().as_secs_f64());
        }
    }

    println!("\nsummary");
    let mut unexpected = 0;
    for (id, title, v, secs) in &verdicts {
        let known = KNOWN_FAILING.contains(id);
        let note = match (v.pass, known) {
            (false, true) => "  (known failure, documented)",
            (true, true) => "  (listed as known failure but passed)",
            _ => "",
        };
        println!("{} {id} {title} [{secs:.0}s]{note}", if v.pass { "PASS" } else { "FAIL" });
        if !v.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
