use std::path::Path;
use std::process::{Command, Output};

fn olqr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_olqr")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn empty_seed_set_names_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "[sweep]\nseeds = 0\n").unwrap();
    let out = olqr(&["--config", "c.toml", "regret"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("EmptyGrid"));
}

#[test]
fn bad_spec_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "[instance]\nkind = \"polynomial\"\nd = 8\nd_u = 2\nalpha = 1.0\n")
        .unwrap();
    let out = olqr(&["--config", "c.toml", "dare"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("BadSpec"));
}

#[test]
fn config_init_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = olqr(&["config-init"], tmp.path());
    assert!(out.status.success());
    std::fs::write(tmp.path().join("c.toml"), &out.stdout).unwrap();
    let again = olqr(&["--config", "c.toml", "config-init", "--out", "o"], tmp.path());
    assert!(again.status.success());
    assert_eq!(std::fs::read(tmp.path().join("o/config.toml")).unwrap(), out.stdout);
}

#[test]
fn dare_from_matrix_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("m.toml"), "a = [[0.5, 0.0], [0.0, 0.5]]\nb = [[0.0], [0.0]]\n").unwrap();
    let out = olqr(&["dare", "--matrices", "m.toml", "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p = std::fs::read_to_string(tmp.path().join("o/dare_P.csv")).unwrap();
    let first: f64 = p.lines().next().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((first - 4.0 / 3.0).abs() < 1e-9);
}

#[test]
fn ragged_matrix_file_fails() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("m.toml"), "a = [[0.5, 0.0], [0.5]]\nlambda = [[1.0]]\n").unwrap();
    let out = olqr(&["dlyap", "--matrices", "m.toml"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("DimensionMismatch"));
}

#[test]
fn regret_writes_traces_summary_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("c.toml"),
        "[instance]\nkind = \"exponential\"\nd = 6\nd_u = 1\nalpha = 1.0\n\n[sweep]\nhorizons = [300, 600, 1200]\nseeds = 2\n",
    )
    .unwrap();
    let out = olqr(&["--config", "c.toml", "--out", "o", "--plots", "--workers", "1", "regret"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("o");
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("T,seed,final_regret,stabilized,eps_cov,eps_op"));
    assert_eq!(summary.lines().count(), 1 + 6);
    let traces: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .flatten()
        .filter(|e| e.file_name().to_string_lossy().starts_with("trace_T"))
        .collect();
    assert_eq!(traces.len(), 6);
    let t = std::fs::read_to_string(traces[0].path()).unwrap();
    assert!(t.starts_with("t,cost,cumcost,regret,phase"));
    assert!(t.contains(",explore") && t.contains(",commit"));
    assert!(dir.join("regret.svg").exists() && dir.join("fit.toml").exists());
}

#[test]
fn break_constant_fails_the_general_check() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "[verify]\ndims = [6]\ninstances = 20\nmaster_seed = 1\n").unwrap();
    let ok = olqr(&["--config", "c.toml", "verify-lemmas"], tmp.path());
    assert!(ok.status.success());
    let broken = olqr(&["--config", "c.toml", "verify-lemmas", "--break-constant"], tmp.path());
    assert!(!broken.status.success());
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL change_of_covariance_general"));
}
