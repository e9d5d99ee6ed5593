use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn specboot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specboot"))
        .args(args)
        .env_remove("SPECBOOT_WORKERS")
        .output()
        .expect("spawn specboot")
}

fn ok(args: &[&str]) -> String {
    let out = specboot(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, setting: &str, n: usize, p: usize, seed: u64) -> std::path::PathBuf {
    let data = dir.join(format!("{setting}-{seed}.csv"));
    ok(&[
        "generate",
        "--setting",
        setting,
        "--n",
        &n.to_string(),
        "--p",
        &p.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn generate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "S1", 30, 10, 5);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 10);
    let b = dir.path().join("again.csv");
    ok(&["generate", "--n", "30", "--p", "10", "--seed", "5", "--out", s(&b)]);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
}

#[test]
fn ci_prints_interval_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "S2", 120, 40, 1);
    let json = dir.path().join("ci.json");
    let line = ok(&["ci", "--data", s(&data), "--B", "40", "--seed", "3", "--workers", "1", "--out", s(&json)]);
    assert!(line.starts_with("stable rank"), "{line}");
    assert_eq!(line.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let lo = v["interval"][0].as_f64().unwrap();
    let hi = v["interval"][1].as_f64().unwrap();
    assert!(lo <= hi);
    assert_eq!(v["B"], 40);
}

#[test]
fn tests_report_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "S2", 120, 40, 2);
    let line = ok(&["test-rank", "--data", s(&data), "--epsilon0", "0.1", "--B", "40", "--workers", "1"]);
    assert!(line.contains("reject") || line.contains("accept"), "{line}");
    let line = ok(&["test-sphericity", "--data", s(&data), "--B", "40", "--workers", "1"]);
    // S2 is far from spherical
    assert!(line.starts_with("sphericity") && line.contains("reject"), "{line}");
}

#[test]
fn inference_config_is_partial_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "S1", 80, 20, 4);
    let cfg = dir.path().join("opts.json");
    fs::write(&cfg, r#"{"seed": 9, "quest": {"k": 20}}"#).unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["ci", "--config", s(&cfg), "--data", s(&data), "--B", "30", "--workers", "1", "--out", s(&a)]);
    ok(&["ci", "--config", s(&cfg), "--data", s(&data), "--B", "30", "--workers", "2", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn bootstrap_from_data_is_worker_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "S1", 80, 20, 6);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let common = ["bootstrap", "--data", s(&data), "--B", "25", "--stat", "largest_eig", "--stat", "lss:square"];
    let line = ok(&[&common[..], &["--seed", "1", "--workers", "1", "--out", s(&a)]].concat());
    assert!(line.starts_with("25 replicates"), "{line}");
    ok(&[&common[..], &["--seed", "1", "--workers", "3", "--out", s(&b)]].concat());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().next().unwrap(), "replicate_index,largest_eig,lss:square,seed");
    assert_eq!(text.lines().count(), 26);
}

#[test]
fn bootstrap_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("boot.json");
    fs::write(
        &cfg,
        r#"{"B": 5, "n": 40, "p": 10, "varsigma_sq_hat": 20.0, "spectrum_tilde": [1,1,1,1,1,1,1,1,1,1],
            "master_seed": 2, "statistics": ["eigen_gap"]}"#,
    )
    .unwrap();
    let out = dir.path().join("draws.csv");
    ok(&["bootstrap", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 6);
}

#[test]
fn mp_density_identity_beyond_square() {
    let dir = tempfile::tempdir().unwrap();
    let eig = dir.path().join("eig.json");
    fs::write(&eig, "[1, 1, 1, 1]").unwrap();
    let out = dir.path().join("mp.csv");
    let line = ok(&["mp-density", "--c", "2", "--eigenvalues", s(&eig), "--grid-points", "256", "--out", s(&out)]);
    assert!(line.contains("zero atom 0.5000"), "{line}");
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,density,cdf"));
    assert_eq!(lines.next(), Some("0,inf,0.5"));
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - (1.0 + 2f64.sqrt()).powi(2)).abs() < 0.01);
}

#[test]
fn simulate_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"design": "adhoc", "n": 40, "ratios": [0.5], "laws": ["i"], "settings": ["S1"],
            "trials": 2, "B": 5, "statistics": ["largest_eig"]}"#,
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let line = ok(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&a), "--workers", "1"]);
    assert!(line.starts_with("2 trial rows"), "{line}");
    ok(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&b), "--workers", "2"]);
    for f in ["trials.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 7);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = specboot(&["simulate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
    // 0.001 · 5000 trials is below the 50-trial floor
    let out = specboot(&["reproduce-table", "--table", "1", "--scale", "0.001", "--out", s(dir.path())]);
    assert!(!out.status.success());
    let out = specboot(&["ci", "--data", s(&dir.path().join("missing.csv"))]);
    assert!(!out.status.success());
    let out = specboot(&["generate", "--law", "iv"]);
    assert!(!out.status.success());
}
