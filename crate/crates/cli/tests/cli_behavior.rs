//! Exit-code contract and guard rails of the command-line tool.

use std::fs;
use std::path::Path;
use std::process::Command;

fn nilm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nilm"))
}

fn synth_small(dest: &Path) {
    let spec = dest.with_extension("spec.json");
    fs::write(
        &spec,
        serde_json::to_string(&serde_json::json!({
            "seed": 1, "n_buildings": 1, "duration_s": 7200.0, "sample_period_s": 10.0,
            "appliances": [
                {"type": "fridge", "states_w": [0.0, 100.0], "mean_on_s": 600.0, "mean_off_s": 600.0},
            ],
        }))
        .unwrap(),
    )
    .unwrap();
    let st = nilm()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--dest")
        .arg(dest)
        .status()
        .unwrap();
    assert!(st.success());
}

#[test]
fn validation_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    // missing dataset.json is a validation problem, not an I/O failure
    let out = nilm()
        .args(["stats", "--dataset"])
        .arg(dir.path())
        .args(["--building", "1", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
}

#[test]
fn synth_refuses_nonempty_destination_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    fs::create_dir_all(&ds).unwrap();
    fs::write(ds.join("keep.txt"), "x").unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"seed":1,"n_buildings":1,"duration_s":3600.0,"sample_period_s":10.0,
            "appliances":[{"type":"fridge","states_w":[0.0,100.0],"mean_on_s":600.0,"mean_off_s":600.0}]}"#,
    )
    .unwrap();
    let base = |force: bool| {
        let mut c = nilm();
        c.args(["synth", "--spec"])
            .arg(&spec)
            .arg("--dest")
            .arg(&ds);
        if force {
            c.arg("--force");
        }
        c.status().unwrap()
    };
    assert_eq!(base(false).code(), Some(2));
    assert!(base(true).success());
}

#[test]
fn duplicate_run_id_is_refused_then_overwritten_with_force() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    synth_small(&ds);
    let model = dir.path().join("model.json");
    assert!(nilm()
        .args(["train", "--dataset"])
        .arg(&ds)
        .args(["--building", "1", "--out"])
        .arg(&model)
        .status()
        .unwrap()
        .success());
    let disagg = |force: bool| {
        let mut c = nilm();
        c.args(["disaggregate", "--dataset"])
            .arg(&ds)
            .args(["--building", "1", "--model"])
            .arg(&model)
            .args(["--run-id", "r1"]);
        if force {
            c.arg("--force");
        }
        c.status().unwrap()
    };
    assert!(disagg(false).success());
    assert_eq!(
        disagg(false).code(),
        Some(2),
        "existing run must be refused"
    );
    assert!(disagg(true).success());
}

#[test]
fn metrics_rejects_mixed_modes() {
    let out = nilm()
        .args(["metrics", "--estimate", "a.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chunk_rows_env_override_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    synth_small(&ds);
    let st = nilm()
        .env("NILM_CHUNK_ROWS", "17")
        .args(["stats", "--dataset"])
        .arg(&ds)
        .args(["--building", "1", "--out"])
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert!(st.success());
    assert!(dir.path().join("out/stats.json").is_file());
    assert!(dir.path().join("out/total_energy.csv").is_file());
}
