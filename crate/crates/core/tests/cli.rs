use std::path::Path;
use std::process::{Command, Output};

fn smolsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smolsim"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("spawn smolsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL_EVOLVE: &[&str] = &[
    "evolve",
    "--override",
    "s=-0.2",
    "--override",
    "n_bins=60",
    "--override",
    "t_final=50",
];

#[test]
fn invalid_exponent_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = smolsim(dir.path(), &["evolve", "--override", "s=0.7"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("s < 1/2"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "s = -0.2\nbogus = 1\n").unwrap();
    let o = smolsim(dir.path(), &["evolve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = smolsim(dir.path(), &["evolve", "--override", "bogus=1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = smolsim(dir.path(), &["profile", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn stepper_failure_is_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL_EVOLVE.to_vec();
    args.extend(["--override", "max_retries=0", "--override", "dt0=100", "--override", "tol_step=1e-12"]);
    let o = smolsim(dir.path(), &args);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn asym_prints_a_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = smolsim(dir.path(), &["asym", "eps-g", "--s", "-0.1"]);
    assert_eq!(code(&o), 0);
    let row = String::from_utf8(o.stdout).unwrap();
    let fields: Vec<&str> = row.trim().split(',').collect();
    assert_eq!(fields[0], "eps-g");
    let g: f64 = fields.last().unwrap().parse().unwrap();
    assert!((g - 1.3686).abs() < 1e-3, "{g}");
    assert!(dir.path().join("asym.csv").exists());
}

#[test]
fn evolve_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&smolsim(a.path(), SMALL_EVOLVE)), 0);
    assert_eq!(code(&smolsim(b.path(), SMALL_EVOLVE)), 0);
    for name in ["config.txt", "snapshots.csv", "moments.csv", "run.json"] {
        let fa = std::fs::read(a.path().join(name)).unwrap();
        let fb = std::fs::read(b.path().join(name)).unwrap();
        assert!(fa == fb, "{name} differs between reruns");
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&smolsim(a.path(), SMALL_EVOLVE)), 0);
    let echoed = a.path().join("config.txt");
    let o = smolsim(b.path(), &["evolve", "--config", echoed.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["config.txt", "snapshots.csv", "moments.csv"] {
        let fa = std::fs::read(a.path().join(name)).unwrap();
        let fb = std::fs::read(b.path().join(name)).unwrap();
        assert!(fa == fb, "{name} differs after config round trip");
    }
}
