use std::path::Path;
use std::process::Command;

use liftrom::config::RunConfig;

fn liftrom(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_liftrom")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn write_config(path: &Path, strict: bool) {
    let mut c = RunConfig::naca_default();
    c.mesh.n_wrap = 32;
    c.mesh.n_radial = 12;
    c.problem.samples = 5;
    c.validate.holdout = 1;
    c.validate.cl_required = 1;
    if strict {
        c.validate.max_cp_error = 1e-9;
    }
    std::fs::write(path, c.to_toml().unwrap()).unwrap();
}

#[test]
fn report_on_empty_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = liftrom(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(text.contains("build_manifest.json"), "{text}");
}

#[test]
fn build_needs_a_config_and_rejects_bad_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(liftrom(&["build", "--out", out]).0, 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 9\n").unwrap();
    assert_eq!(liftrom(&["build", "--config", bad.to_str().unwrap(), "--out", out]).0, 1);
}

#[test]
fn validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let (ok, strict) = (dir.path().join("ok.toml"), dir.path().join("strict.toml"));
    write_config(&ok, false);
    write_config(&strict, true);
    let (code, text) = liftrom(&["build", "--config", ok.to_str().unwrap(), "--out", out, "--jobs", "1"]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(liftrom(&["validate", "--out", out]).0, 0);
    assert_eq!(liftrom(&["validate", "--config", strict.to_str().unwrap(), "--out", out]).0, 2);
    assert_eq!(liftrom(&["report", "--out", out]).0, 0);
}
