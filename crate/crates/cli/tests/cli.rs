//! End-to-end checks of the experiment runner: fixture loading, schema
//! violations with field paths, exit codes, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fbsdeplab"))
}

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/lq_default.spec")
}

fn fixture_text() -> String {
    std::fs::read_to_string(fixture_path()).unwrap()
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fbsdeplab-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn golden_fixture_loads_and_riccati_passes() {
    let out = tmp_dir("riccati");
    let status = bin()
        .args(["riccati", "--spec"])
        .arg(fixture_path())
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("riccati.max_pi_diff="), "{summary}");
    assert!(summary.contains("provenance=lq.solve_riccati_system"));
    assert!(summary.trim_end().ends_with("pass=true"));
    assert!(out.join("pi.csv").exists());
    assert!(out.join("run.log").exists());
}

#[test]
fn missing_cost_field_is_named() {
    let broken = fixture_text().replace("l11 = 1.0", "");
    let spec = tmp_dir("broken-spec").join("spec");
    std::fs::create_dir_all(spec.parent().unwrap()).unwrap();
    std::fs::write(&spec, broken).unwrap();
    let out = bin()
        .args(["riccati", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp_dir("broken-out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cost.l11"), "{stderr}");
}

#[test]
fn tilt_bound_violation_is_reported() {
    let broken = fixture_text().replace(
        "lambda11 = marks: 0.8, 0.85, 0.92",
        "lambda11 = marks: 0.8, 1.2, 0.92",
    );
    let spec = tmp_dir("tilt-spec").join("spec");
    std::fs::create_dir_all(spec.parent().unwrap()).unwrap();
    std::fs::write(&spec, broken).unwrap();
    let out = bin()
        .args(["riccati", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp_dir("tilt-out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tilt must lie in [l,1)"), "{stderr}");
}

#[test]
fn unknown_command_is_usage_error() {
    let out = bin()
        .args(["frobnicate", "--spec"])
        .arg(fixture_path())
        .arg("--out")
        .arg(tmp_dir("unknown"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let mut outputs = Vec::new();
    for (tag, threads) in [("det-a", "1"), ("det-b", "4"), ("det-c", "4")] {
        let out = tmp_dir(tag);
        let status = bin()
            .args(["girsanov-check", "--spec"])
            .arg(fixture_path())
            .arg("--out")
            .arg(&out)
            .args(["--paths", "2000", "--threads", threads])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push((
            std::fs::read(out.join("girsanov.csv")).unwrap(),
            std::fs::read(out.join("summary.txt")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "csv differs across threads");
    assert_eq!(outputs[0].1, outputs[1].1, "summary differs across threads");
    assert_eq!(outputs[1].0, outputs[2].0, "csv differs across reruns");
}

#[test]
fn seed_override_changes_results() {
    let run = |seed: &str, tag: &str| -> Vec<u8> {
        let out = tmp_dir(tag);
        let status = bin()
            .args(["cost", "--spec"])
            .arg(fixture_path())
            .arg("--out")
            .arg(&out)
            .args(["--paths", "500", "--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("cost.csv")).unwrap()
    };
    let a = run("1", "seed-a");
    let b = run("2", "seed-b");
    assert_ne!(a, b);
}
