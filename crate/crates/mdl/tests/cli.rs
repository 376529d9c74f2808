//! Command-line interface checks: file round trips, output shapes, and the
//! exit-code contract (0 pass, 1 failed check, 2 usage or input errors).

use std::path::Path;
use std::process::{Command, Output};

fn mdl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary launches")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf8 stdout")
}

#[test]
fn generated_towers_validate_with_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = mdl(
        &["system", "gen", "--m", "2", "--depth", "3", "--rule", "periodic", "-o", "sys.json"],
        tmp.path(),
    );
    assert_eq!(code(&gen), 0, "{}", String::from_utf8_lossy(&gen.stderr));
    let check = mdl(&["system", "validate", "sys.json"], tmp.path());
    assert_eq!(code(&check), 0);
    assert!(stdout(&check).lines().all(|l| l.starts_with("ok")));
}

#[test]
fn corrupted_masses_fail_validation_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    mdl(
        &["system", "gen", "--m", "2", "--depth", "2", "--rule", "doubling", "-o", "sys.json"],
        tmp.path(),
    );
    let path = tmp.path().join("sys.json");
    let mut dto: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    dto["levels"][1]["edges"][0]["mass"] = "1/3".into();
    std::fs::write(&path, serde_json::to_string(&dto).unwrap()).unwrap();
    let check = mdl(&["system", "validate", "sys.json"], tmp.path());
    assert_eq!(code(&check), 1);
    assert!(stdout(&check).contains("FAIL mass_pushforward"));
}

#[test]
fn usage_and_input_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing_arg = mdl(&["system", "gen", "--m", "2", "-o", "x.json"], tmp.path());
    assert_eq!(code(&missing_arg), 2);
    let bad_suite = mdl(&["run", "--suite", "bogus"], tmp.path());
    assert_eq!(code(&bad_suite), 2);
    let missing_file = mdl(&["limit", "dist", "none.json", "--x", "v0", "--y", "v1"], tmp.path());
    assert_eq!(code(&missing_file), 2);
    let bad_point = mdl(&["limit", "dist", "sys.json", "--x", "w0", "--y", "v1"], tmp.path());
    assert_eq!(code(&bad_point), 2);
}

#[test]
fn distance_query_reports_estimate_and_bound() {
    let tmp = tempfile::tempdir().unwrap();
    mdl(
        &["system", "gen", "--m", "2", "--depth", "3", "--rule", "periodic", "-o", "sys.json"],
        tmp.path(),
    );
    let dist = mdl(
        &["limit", "dist", "sys.json", "--x", "v0", "--y", "e0:1/2"],
        tmp.path(),
    );
    assert_eq!(code(&dist), 0);
    let value: serde_json::Value = serde_json::from_str(&stdout(&dist)).unwrap();
    assert!(value["estimate"].as_f64().unwrap() >= 0.0);
    assert!(value["bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn fragment_commands_emit_scale_estimate_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let n = 512;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let frag = serde_json::json!({
        "domain": [[0.0, 1.0]],
        "times": times,
        "points": times.iter().map(|t| vec![2.0 * t, *t]).collect::<Vec<_>>(),
    });
    std::fs::write(tmp.path().join("line.json"), serde_json::to_string(&frag).unwrap()).unwrap();

    let md = mdl(&["frag", "md", "line.json", "--rho", "l1", "--t", "0.5"], tmp.path());
    assert_eq!(code(&md), 0);
    let body = stdout(&md);
    assert!(body.starts_with("scale,estimate\n"));
    assert!(body.lines().skip(1).all(|l| l.ends_with(",3")));

    let len = mdl(&["frag", "len", "line.json", "--rho", "l2"], tmp.path());
    assert_eq!(code(&len), 0);
    let last = stdout(&len).lines().last().unwrap().to_string();
    let value: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((value - 5.0f64.sqrt()).abs() < 1e-6);

    let area = mdl(
        &["frag", "area", "line.json", "--rho", "l2", "--deltas", "1/8,1/32"],
        tmp.path(),
    );
    assert_eq!(code(&area), 0);
    assert_eq!(stdout(&area).lines().count(), 3);
}

#[test]
fn lip_sweep_writes_the_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    mdl(
        &["system", "gen", "--m", "2", "--depth", "3", "--rule", "periodic", "-o", "sys.json"],
        tmp.path(),
    );
    let sweep = mdl(
        &["lip", "sweep", "sys.json", "--points", "5", "--seed", "1", "-o", "lip.csv"],
        tmp.path(),
    );
    assert_eq!(code(&sweep), 0, "{}", String::from_utf8_lossy(&sweep.stderr));
    let body = std::fs::read_to_string(tmp.path().join("lip.csv")).unwrap();
    assert!(body.starts_with("point_id,phi_value,Lip,lip,ratio,finest_scale\n"));
    assert_eq!(body.lines().count(), 6);
}

#[test]
fn alberti_round_trip_verifies_cylinder_masses() {
    let tmp = tempfile::tempdir().unwrap();
    mdl(
        &["system", "gen", "--m", "2", "--depth", "3", "--rule", "periodic", "-o", "sys.json"],
        tmp.path(),
    );
    let gen = mdl(
        &["alberti", "gen", "sys.json", "--lines", "64", "--seed", "2", "-o", "rep.json"],
        tmp.path(),
    );
    assert_eq!(code(&gen), 0);
    let verify = mdl(
        &["alberti", "verify", "sys.json", "rep.json", "--level", "1", "--tol", "0.05"],
        tmp.path(),
    );
    assert_eq!(code(&verify), 0, "{}", String::from_utf8_lossy(&verify.stderr));
    assert!(stdout(&verify).starts_with("level,edge,target,estimate,residual\n"));
}

#[test]
fn blowup_run_reports_sigma_in_range() {
    let tmp = tempfile::tempdir().unwrap();
    mdl(
        &["system", "gen", "--m", "2", "--depth", "4", "--rule", "periodic", "-o", "sys.json"],
        tmp.path(),
    );
    let run = mdl(
        &["blowup", "run", "sys.json", "--p-seed", "3", "--scale", "1", "--window", "2"],
        tmp.path(),
    );
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let value: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    let sigma = value["sigma"].as_f64().unwrap();
    assert!((1.0..=2.0).contains(&sigma));
    assert_eq!(value["submersion"]["lipschitz_violations"].as_u64(), Some(0));
}

#[test]
fn fold_maps_on_tube_towers_are_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    mdl(
        &["system", "gen", "--m", "2", "--depth", "3", "--rule", "periodic", "-o", "sys.json"],
        tmp.path(),
    );
    mdl(
        &["system", "gen", "--m", "2", "--depth", "3", "--rule", "tube", "-o", "tube.json"],
        tmp.path(),
    );
    let chart = mdl(&["blowup", "factor", "sys.json", "--map", "chart"], tmp.path());
    assert_eq!(code(&chart), 0, "{}", String::from_utf8_lossy(&chart.stderr));
    // branch pairs on tube towers never reconverge, so any factoring run
    // reports the failed hypotheses
    let fold = mdl(&["blowup", "factor", "tube.json", "--map", "fold"], tmp.path());
    assert_eq!(code(&fold), 1);
    assert!(stdout(&fold).starts_with("scale,median_defect,max_defect\n"));
}

#[test]
fn suite_runs_write_artifacts_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let run = mdl(
        &[
            "run", "--suite", "md", "--suite", "area", "--depth", "4", "--tolerance", "coarse",
            "-o", "out",
        ],
        tmp.path(),
    );
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("2/2 suites passed"));
    for name in ["md.csv", "area.csv", "summary.txt"] {
        assert!(tmp.path().join("out").join(name).exists(), "{name} missing");
    }
}
