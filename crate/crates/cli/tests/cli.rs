use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
method = "galerkin"

[model]
builtin = "scrapie"
horizon = [0.0, 100.0]

[uq]
degree = 1
variation = 0.1

[quadrature]
rule = { kind = "tensor", per_axis = 2 }
nonlinear = { kind = "tensor", per_axis = 3 }

[integrator]
grid_points = 21

[integrator.snapshot]
method = "trapezoidal"
rel_tol = 1e-4
abs_tol = 1e-6

[integrator.evaluation]
method = "trapezoidal"
rel_tol = 1e-3
abs_tol = 1e-6

[mor]
r = [2, 3]

[outputs]
detail_r = [3]
"#;

fn stochmor(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochmor"))
        .args(args)
        .env("STOCHMOR_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn write_small(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_prints_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = stochmor(&["validate-config", "scrapie-galerkin"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# hash "));
    assert!(text.contains(&dir.path().join("runs/scrapie-galerkin").display().to_string()));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        stochmor(&["validate-config", "no-such-config"], dir.path())
            .status
            .code(),
        Some(2)
    );
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("degree = 1", "degree = 1\ncolour = 3")).unwrap();
    assert_eq!(
        stochmor(&["run", bad.to_str().unwrap()], dir.path()).status.code(),
        Some(2)
    );
    let cfg = write_small(dir.path());
    assert_eq!(
        stochmor(&["sweep", &cfg, "-r", "5-2"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        stochmor(&["plot", "/nonexistent/run"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn run_writes_results_and_replots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = stochmor(&["-q", "run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("runs/small");
    for file in [
        "manifest.json",
        "sweep.csv",
        "errors_r3_x1_mor.csv",
        "plots/max_error_x1.svg",
    ] {
        assert!(run.join(file).exists(), "{file}");
    }
    std::fs::remove_dir_all(run.join("plots")).unwrap();
    let out = stochmor(&["plot", run.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(run.join("plots/singular_values.svg").exists());
}

#[test]
fn failed_dimensions_exit_with_10() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = stochmor(&["-q", "sweep", &cfg, "-r", "2,500"], dir.path());
    assert_eq!(out.status.code(), Some(10));
    assert!(String::from_utf8(out.stderr).unwrap().contains("r=500"));
    let manifest = std::fs::read_to_string(dir.path().join("runs/small/manifest.json")).unwrap();
    assert!(manifest.contains("\"failures\""));
}

#[test]
fn reuse_renames_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = stochmor(&["-q", "reuse", &cfg, "-r", "3", "-m", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("runs/small-reuse-x1.5/sweep.csv").exists());
}
