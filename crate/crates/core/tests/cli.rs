use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rwre-lab"))
}

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.toml")
}

fn read_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn missing_config_exits_with_two() {
    let out = bin().args(["identities", "--config", "/definitely/not/here.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "no_such_key = 3\n").unwrap();
    let out = bin().args(["density", "--config", p.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_with_two() {
    assert_eq!(bin().arg("fly").output().unwrap().status.code(), Some(2));
}

#[test]
fn identities_on_small_config_is_green() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["identities", "--config", small_config().to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("identities/metadata.json")).unwrap()).unwrap();
    for key in ["seed", "config_hash", "version", "wall_time_seconds", "threads", "partial"] {
        assert!(meta.get(key).is_some(), "metadata lacks {key}");
    }
    assert_eq!(meta["seed"], 7);
}

#[test]
fn same_seed_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(i.to_string());
        let status = bin()
            .args(["density", "--config", small_config().to_str().unwrap(), "--seed", "11", "--threads", threads, "--out", out.to_str().unwrap(), "-q"])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        runs.push(read_csvs(&out.join("density")));
    }
    assert!(runs[0].len() >= 3);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn seed_flag_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        bin().args(["density", "--seed", seed, "--out", out.to_str().unwrap(), "-q"]).status().unwrap();
        runs.push(std::fs::read(out.join("density/quenched_density.csv")).unwrap());
    }
    assert_ne!(runs[0], runs[1]);
}

#[test]
fn report_summarizes_previous_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    assert_eq!(bin().args(["identities", "--out", o, "-q"]).status().unwrap().code(), Some(0));
    assert_eq!(bin().args(["report", "--out", o, "-q"]).status().unwrap().code(), Some(0));
    let summary = std::fs::read_to_string(dir.path().join("report/summary.csv")).unwrap();
    assert!(summary.contains("identities"));
}
