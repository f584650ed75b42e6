use echo_lab::cli::{dispatch, EXIT_ERROR, EXIT_OK, EXIT_USAGE};
use echo_lab::io;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("echo-lab").chain(args.iter().copied()))
}

#[test]
fn usage_errors() {
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["no-such-verb"]), EXIT_USAGE);
    assert_eq!(run(&["verify", "--bogus"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["run-toy", "--out", out, "--set", "grid.bogus=1"]), EXIT_ERROR);
    assert_eq!(run(&["run-toy", "--out", out, "--config", "/nonexistent.toml"]), EXIT_ERROR);
    assert_eq!(run(&["report", "--out", out]), EXIT_ERROR);
}

#[test]
fn fast_verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["verify", "--fast", "--out", o, "--seed", "3"]), EXIT_OK);
    let r = io::read_report_json(&out.join("report.json")).unwrap();
    assert!(r.all_pass());
    assert!(!r.checks.is_empty());
    assert_eq!(run(&["report", "--out", o]), EXIT_OK);
}

#[test]
fn linear_run_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    assert_eq!(run(&["run-linear", "--out", o, "--set", "grid.k_max=3", "--threads", "1"]), EXIT_OK);
    let r = io::read_report_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(r.manifest.files.len(), 1);
    r.manifest.verify_files(dir.path()).unwrap();
    let rho = io::read_density_csv(&dir.path().join("density_linear.csv")).unwrap();
    assert_eq!(rho.modes, vec![-3, -2, -1, 1, 2, 3]);
    assert!(rho.reality_defect() < 1e-10);
    assert_eq!(run(&["report", "--out", o]), EXIT_OK);
}
