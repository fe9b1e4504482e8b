use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .display()
        .to_string()
}

fn spolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spolab"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = spolab(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path, algorithm: &str) -> PathBuf {
    let path = dir.join(format!("{algorithm}.json"));
    let cfg = serde_json::json!({
        "algorithm": algorithm, "batch_size": 32, "group_size": 8, "iterations": 15, "seed": 1,
        "optim": {"lr": 5.0}, "env": fixture("easy_hard_mix.json")
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = spolab(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = spolab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_closed_forms() {
    assert!(ok(&["analyze", "en", "--p", "0.1"]).starts_with("10.111"));
    assert_eq!(ok(&["analyze", "en", "--p", "0.5"]).trim(), "3");
    assert!(ok(&["analyze", "zg", "--p", "0.9", "--g", "8"]).starts_with("0.43046"));
    let ratio = ok(&[
        "analyze",
        "ratio",
        "--config",
        &fixture("ratio_p09_g8.json"),
    ]);
    assert!(ratio.contains("information_loss 1.7558"));
    let out = spolab(&["analyze", "en", "--p", "1.0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divergence"));
}

#[test]
fn analyze_validate_prints_a_table_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("validate.json");
    let table = ok(&[
        "analyze",
        "validate",
        "--trials",
        "20000",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(table.lines().count() >= 13);
    assert!(table.contains("E[N] p=0.1"));
    assert!(tmp.path().join("validate.json.manifest.json").exists());
}

#[test]
fn train_writes_metrics_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "spo");
    let out = tmp.path().join("run");
    ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("iter,J,adv_var_raw,degenerate_ratio,nz_ratio_1e-4,nz_ratio_0.02,tracker_mse,samples,contributing\n"));
    assert_eq!(csv.lines().count(), 16);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([4]));
    assert_eq!(manifest["config"]["seed"], 4);
    assert_eq!(manifest["fixture_hashes"].as_object().unwrap().len(), 2);
    assert!(manifest["config"]["env"].is_object());
}

#[test]
fn fixtures_are_not_modified() {
    let tmp = tempfile::tempdir().unwrap();
    let path = fixture("spo_easyhard.json");
    let before = std::fs::read(&path).unwrap();
    let env_before = std::fs::read(fixture("easy_hard_mix.json")).unwrap();
    let out = tmp.path().join("run");
    ok(&["train", "--config", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(std::fs::read(&path).unwrap(), before);
    assert_eq!(
        std::fs::read(fixture("easy_hard_mix.json")).unwrap(),
        env_before
    );
}

#[test]
fn fixture_root_can_be_overridden() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"algorithm": "spo", "batch_size": 16, "iterations": 3, "env": "easy_hard_mix.json"}"#,
    )
    .unwrap();
    let out = tmp.path().join("run");
    let missing = spolab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    let root = Path::new(&fixture("easy_hard_mix.json"))
        .parent()
        .unwrap()
        .to_path_buf();
    let found = Command::new(env!("CARGO_BIN_EXE_spolab"))
        .env("SPOLAB_FIXTURES", root)
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(found.status.success());
}

#[test]
fn config_errors_exit_nonzero_with_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"algorithm": "grpo", "batch_size": 30, "group_size": 8, "iterations": 3, "env": {"M": 4, "K": 2, "q": [[0,1],[0,1],[0,1],[0,1]]}}"#,
    )
    .unwrap();
    let out = spolab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("group_size"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn compare_joins_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let spo_cfg = small_config(tmp.path(), "spo");
    let grpo_cfg = small_config(tmp.path(), "grpo");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "train",
        "--config",
        spo_cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    ok(&[
        "train",
        "--config",
        grpo_cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    let out = spolab(&[
        "compare",
        "--spo",
        a.to_str().unwrap(),
        "--grpo",
        b.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 16);
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    let (js, jg, delta): (f64, f64, f64) = (
        last[1].parse().unwrap(),
        last[2].parse().unwrap(),
        last[3].parse().unwrap(),
    );
    assert!((js - jg - delta).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&out.stderr).contains("final_J"));

    let dir = tmp.path().join("cmp");
    ok(&[
        "compare",
        "--spo",
        a.to_str().unwrap(),
        "--grpo",
        b.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["mean_degenerate_ratio"]["spo"].is_null());
    assert!(summary["mean_degenerate_ratio"]["grpo"].as_f64().unwrap() > 0.0);
    assert!(dir.join("manifest.json").exists());
}

#[test]
fn init_tracker_is_deterministic_and_loadable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "spo");
    let (s1, s2) = (tmp.path().join("t1.json"), tmp.path().join("t2.json"));
    ok(&[
        "init-tracker",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        s1.to_str().unwrap(),
    ]);
    ok(&[
        "init-tracker",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        s2.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    let snap: serde_json::Value = serde_json::from_slice(&std::fs::read(&s1).unwrap()).unwrap();
    assert_eq!(snap["schema_version"], 1);
    assert_eq!(snap["prompts"].as_array().unwrap().len(), 512);

    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--tracker-init",
        s1.to_str().unwrap(),
        "--out",
        r1.to_str().unwrap(),
    ]);
    ok(&[
        "train",
        "--config",
        r1.join("manifest.json").to_str().unwrap(),
        "--out",
        r2.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(r1.join("metrics.csv")).unwrap(),
        std::fs::read(r2.join("metrics.csv")).unwrap()
    );

    std::fs::write(&s1, "{\"prompts\": []}").unwrap();
    let out = spolab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--tracker-init",
        s1.to_str().unwrap(),
        "--out",
        r1.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));
}

#[test]
fn manifest_of_another_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("s.csv");
    ok(&[
        "sched",
        "--config",
        &fixture("sched_deterministic.json"),
        "--replications",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    let manifest = tmp.path().join("s.csv.manifest.json");
    let out = spolab(&[
        "train",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sched"));
}

#[test]
fn sched_reports_the_deterministic_example() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("d.csv");
    let stdout = ok(&[
        "sched",
        "--config",
        &fixture("sched_deterministic.json"),
        "--replications",
        "3",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(stdout.contains("median speedup 2.5000"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "replication,strategy,makespan,wasted,speedup"
    );
    assert!(text.contains("0,group,50,120,1\n0,groupfree,20,40,2.5\n"));
}
