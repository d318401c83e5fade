use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn specmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specmm"))
        .args(args)
        .env("SPECMM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn scenario(config: &str, out: &Path) -> Output {
    specmm(&[
        "scenario",
        "--config",
        fixture(config).to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn failing_fixture_exits_nonzero_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = scenario("failing_expectation.json", dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("FAILED custom: expected_verdict"), "{err}");
    // Reports are still written for inspection.
    assert!(dir.path().join("custom.json").exists());
}

#[test]
fn passing_fixture_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = scenario("passing_expectation.json", dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok     expected_verdict"));
}

#[test]
fn invalid_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = scenario("empty_grid.json", dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid is empty"));
}

#[test]
fn scenario_files_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(scenario("kk_small.json", a.path()).status.success());
    assert!(scenario("kk_small.json", b.path()).status.success());
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 4);
    for name in names {
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap()
        );
    }
}

#[test]
fn single_shot_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(
        specmm(&["generate", "--cycle", "1,16", "--name", "x", "--out", d])
            .status
            .success()
    );
    assert!(
        specmm(&["generate", "--cycle", "1.1,16", "--name", "y", "--out", d])
            .status
            .success()
    );
    let x = dir.path().join("x.json");
    let y = dir.path().join("y.json");
    let (xs, ys) = (x.to_str().unwrap(), y.to_str().unwrap());

    let spectrum = specmm(&["spectrum", xs]);
    let text = String::from_utf8(spectrum.stdout).unwrap();
    assert!(text.starts_with("index,lambda,cluster_id\n0,0.0000000000000000e0,0\n"));
    assert_eq!(text.lines().count(), 17);

    assert!(specmm(&["embed", xs, "--t", "0.5", "--out", d])
        .status
        .success());
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("cloud.json")).unwrap()).unwrap();
    assert_eq!(sidecar["variant"], "I");
    assert_eq!(sidecar["t"], 0.5);

    let dist = specmm(&[
        "dist",
        xs,
        ys,
        "--budget-inner",
        "2",
        "--budget-outer",
        "2",
        "--seed",
        "3",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&dist.stdout).unwrap();
    assert_eq!(v[0]["kind"], "spec");
    assert_eq!(v[0]["seed"], 3);
    assert_eq!(v[1]["kind"], "spec_lower");
    assert_eq!(v[1]["direction"], "upper_estimate");

    let kk = specmm(&["kk", xs, ys]);
    let v: serde_json::Value = serde_json::from_slice(&kk.stdout).unwrap();
    assert_eq!(v["kind"], "kasue_kumura");

    let rec = specmm(&["reconstruct", xs, ys, "--out", d]);
    assert!(rec.status.success());
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("verdict.json")).unwrap()).unwrap();
    assert_eq!(v["verdict"], "not_isomorphic");

    let bad = specmm(&["generate", "--cycle", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}
