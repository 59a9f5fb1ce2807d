use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kg2d"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn builtin_dir(tmp: &Path) -> std::path::PathBuf {
    let dir = tmp.join("sys");
    let out = bin().arg("builtin").arg(&dir).output().unwrap();
    assert!(out.status.success());
    dir
}

#[test]
fn check_exit_codes_and_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = builtin_dir(tmp.path());

    let out = bin().arg("check").arg(sys.join("nonnull_resonant.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(10));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["is_null"], false);
    assert_eq!(doc["phi1"][0]["re"], "1/4");
    assert_eq!(doc["phi2"][0]["re"], "1/4");

    let out = bin().arg("check").arg(sys.join("strongnull_only.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    let garbage = tmp.path().join("garbage.json");
    write(&garbage, "not json at all");
    let out = bin().arg("check").arg(&garbage).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("check").arg(tmp.path().join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decompose_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = builtin_dir(tmp.path());

    let out = bin().arg("decompose").arg(sys.join("null_example.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // builtin family uses p1 = 1: the G1/G2 pair along x1
    assert_eq!(doc["generators"]["G1[|x1]"], "1");
    assert_eq!(doc["generators"]["G2[x1]"], "1");

    let out = bin().arg("decompose").arg(sys.join("nonnull_resonant.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(10));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["not_null"], true);
    assert!(!doc["residual"].as_array().unwrap().is_empty());
}

#[test]
fn resonance_classification() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = builtin_dir(tmp.path());
    let out = bin().arg("resonance").arg(sys.join("null_example.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["resonant"], true);
    assert_eq!(doc["matrices"].as_array().unwrap().len(), 6);
    let degenerate: Vec<(u64, u64, u64)> = doc["matrices"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|m| m["invertible"] == false)
        .map(|m| (m["j"].as_u64().unwrap(), m["k"].as_u64().unwrap(), m["l"].as_u64().unwrap()))
        .collect();
    assert_eq!(degenerate, vec![(1, 1, 2), (2, 1, 1)]);
    assert_eq!(doc["degenerate_images"][0][0], "-2");
    assert_eq!(doc["degenerate_images"][1][0], "1");
}

fn sim_config(builtin: &str, t_end: f64, epsilon: f64, name: &str) -> String {
    format!(
        r#"{{
  "name": "{name}",
  "builtin": "{builtin}",
  "grid": {{"n": 32, "length": 20.0}},
  "dt": 0.05,
  "t_end": {t_end},
  "data": {{"family": "gaussian", "epsilon": {epsilon}, "sigma": 1.5}},
  "cadence": 5
}}"#
    )
}

#[test]
fn simulate_zero_horizon_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("zero.json");
    write(&cfg, &sim_config("null_example", 0.0, 0.05, "zero"));
    let out_root = tmp.path().join("out");

    let out = bin().arg("simulate").arg(&cfg).arg("--out").arg(&out_root).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(out_root.join("zero/diagnostics.csv")).unwrap();
    // header + exactly the initial row
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("time,energy,h2,"));

    // identical invocation → byte-identical CSVs
    let cfg2 = tmp.path().join("short.json");
    write(&cfg2, &sim_config("null_example", 0.5, 0.05, "short"));
    bin().arg("simulate").arg(&cfg2).arg("--out").arg(&out_root).output().unwrap();
    let first = std::fs::read(out_root.join("short/diagnostics.csv")).unwrap();
    bin().arg("simulate").arg(&cfg2).arg("--out").arg(&out_root).output().unwrap();
    let second = std::fs::read(out_root.join("short/diagnostics.csv")).unwrap();
    assert_eq!(first, second);

    // manifest hashes are config-determined
    let m: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_root.join("short/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn simulate_blowup_exits_11() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("blow.json");
    // large-amplitude nonnull data with a tight threshold blows up fast
    write(
        &cfg,
        r#"{
  "builtin": "nonnull_resonant",
  "grid": {"n": 32, "length": 20.0},
  "dt": 0.05,
  "t_end": 40.0,
  "data": {"family": "gaussian", "epsilon": 4.0, "sigma": 2.0},
  "cadence": 2,
  "blowup_factor": 5.0
}"#,
    );
    let out_root = tmp.path().join("out");
    let out = bin().arg("simulate").arg(&cfg).arg("--out").arg(&out_root).output().unwrap();
    assert_eq!(out.status.code(), Some(11));
    // partial outputs still written
    assert!(out_root.join("blow/diagnostics.csv").exists());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["record"]["blew_up"], true);
}

#[test]
fn simulate_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    write(&cfg, r#"{"grid": {"n": 32, "length": 20.0}}"#);
    let out = bin().arg("simulate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_aggregates_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sweep.json");
    write(
        &cfg,
        r#"{
  "base": {
    "builtin": "null_example",
    "grid": {"n": 32, "length": 20.0},
    "dt": 0.05,
    "t_end": 0.5,
    "data": {"family": "gaussian", "epsilon": 0.05, "sigma": 1.5},
    "cadence": 5
  },
  "epsilon": [0.1, 0.05]
}"#,
    );
    let out_root = tmp.path().join("out");
    let out = bin()
        .arg("sweep")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_root)
        .arg("--jobs")
        .arg("2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cells = doc["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for cell in cells {
        assert_eq!(cell["summary"]["growth"]["verdict"], "bounded");
        assert!(cell["error"].is_null());
    }
    assert!(out_root.join("sweep/sweep.json").exists());

    // empty ε list → empty table, exit 0
    let empty = tmp.path().join("empty.json");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("[0.1, 0.05]", "[]");
    write(&empty, &text);
    let out = bin().arg("sweep").arg(&empty).arg("--out").arg(&out_root).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["cells"].as_array().unwrap().is_empty());
}
