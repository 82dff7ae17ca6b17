mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::scenario_path;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_renewal-sir"))
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(args)
        .env("RENEWAL_SIR_THREADS", "2")
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    scenario_path(name).to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&out, &["simulate", &scenario("reference.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("t,L1_S,L1_I,L1_R,TV_S,TV_I,TV_R,mass_total"));
    assert_eq!(summary.lines().count(), 1 + 41);
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,a,S,I,R,side"));
    assert!(traj.lines().any(|l| l.ends_with(",-")) && traj.lines().any(|l| l.ends_with(",+")));
}

#[test]
fn rerun_from_resolved_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a, &["simulate", &scenario("reference.toml")]).status.code(), Some(0));
    let resolved = a.join("resolved.toml");
    assert_eq!(run(&b, &["simulate", resolved.to_str().unwrap()]).status.code(), Some(0));
    for f in ["resolved.toml", "trajectory.csv", "summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_scenario_exits_one_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario_path("toy_optimize.toml")).unwrap();
    std::fs::write(&bad, text.replace("[kernel]", "[kernel]\nstrength = 2")).unwrap();
    let out = dir.path().join("out");
    let o = run(&out, &["simulate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strength"));
    assert!(!out.exists());

    std::fs::write(&bad, text.replace("d_s = 0.02", "d_s = -0.02")).unwrap();
    assert_eq!(run(&out, &["simulate", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&out, &["check", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&out, &["simulate", "/nonexistent.toml"]).status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn optimize_needs_its_section() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&out, &["optimize", &scenario("reference.toml")]).status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn optimize_writes_history_and_control() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&out, &["--seed", "5", "optimize", &scenario("toy_optimize.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.starts_with("eval,x0,x1,cost,effect,violation,feasible"));
    let control = std::fs::read_to_string(out.join("best_control.csv")).unwrap();
    assert_eq!(control.lines().count(), 1 + 2);
    let resolved = std::fs::read_to_string(out.join("resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 5"));
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn blow_up_exits_two_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blowup.toml");
    std::fs::write(
        &path,
        "[grid]\nage_max = 4.0\ncells_per_unit_age = 10\nhorizon = 3.0\n\
         [kernel]\nform = \"constant\"\nvalue = 40.0\n\
         [rates]\nd_s = -3.0\nd_i = -3.0\nd_r = -3.0\nallow_signed_rates = true\n\
         [data]\ns_o = 5.0\ni_o = 5.0\ns_b = 5.0\ni_b = 5.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&out, &["simulate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blow-up"));
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn check_convergence_and_validate_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&out, &["check", &scenario("reference.toml")]).status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_renewal-sir"))
        .args(["convergence", &scenario("toy_optimize.toml"), "--levels", "2"])
        .env("RENEWAL_SIR_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ratio"));
    let o = Command::new(env!("CARGO_BIN_EXE_renewal-sir")).arg("validate").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn usage_errors_exit_one() {
    let o = Command::new(env!("CARGO_BIN_EXE_renewal-sir")).arg("fly").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_renewal-sir")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}
