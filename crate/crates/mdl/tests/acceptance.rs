//! End-to-end acceptance checks, one test per criterion. The first nine
//! audit the outcome of a single full-tolerance run shared across tests;
//! the tenth replays the full command-line run and compares every byte.

use std::path::Path;
use std::process::Command;
use std::sync::LazyLock;

use mdl::suite::{run, RunConfig, SuiteName, SuiteOutcome, Summary};

static FINE: LazyLock<Summary> = LazyLock::new(|| {
    let config = RunConfig::new(6, 1).expect("valid config");
    run(&config).expect("suite run completes")
});

fn audited(suite: SuiteName, budget_seconds: Option<f64>) -> &'static SuiteOutcome {
    let outcome = FINE.outcome(suite).expect("suite selected");
    for line in &outcome.lines {
        println!("  {line}");
    }
    if let Some(budget) = budget_seconds {
        println!("  runtime {:.1}s of {budget}s", outcome.seconds);
        assert!(
            outcome.seconds < budget,
            "{} took {:.1}s, over the {budget}s budget",
            suite.name(),
            outcome.seconds
        );
    }
    assert!(outcome.passed, "{} checks failed", suite.name());
    outcome
}

#[test]
fn criterion_01_axiom_grid_validates_exactly() {
    audited(SuiteName::Axioms, Some(30.0));
    println!("criterion 1: PASS");
}

#[test]
fn criterion_02_metric_differential_recovers_speeds() {
    audited(SuiteName::Md, Some(10.0));
    println!("criterion 2: PASS");
}

#[test]
fn criterion_03_area_residuals_decay_below_tolerance() {
    audited(SuiteName::Area, None);
    println!("criterion 3: PASS");
}

#[test]
fn criterion_04_upper_and_lower_constants_agree() {
    audited(SuiteName::LipLip, Some(300.0));
    println!("criterion 4: PASS");
}

#[test]
fn criterion_05_seminorm_families_settle() {
    audited(SuiteName::Seminorms, None);
    println!("criterion 5: PASS");
}

#[test]
fn criterion_06_line_representations_reproduce_masses() {
    audited(SuiteName::Alberti, None);
    println!("criterion 6: PASS");
}

#[test]
fn criterion_07_blowup_normalization_and_submersion() {
    audited(SuiteName::Blowup, None);
    println!("criterion 7: PASS");
}

#[test]
fn criterion_08_variation_law_on_zoomed_balls() {
    audited(SuiteName::Variation, None);
    println!("criterion 8: PASS");
}

#[test]
fn criterion_09_factoring_through_the_chart() {
    audited(SuiteName::Factoring, None);
    println!("criterion 9: PASS");
}

fn full_cli_run(dir: &Path) -> (String, Vec<(String, Vec<u8>)>) {
    let output = Command::new(env!("CARGO_BIN_EXE_mdl"))
        .args(["run", "--all", "--seed", "1", "-o"])
        .arg(dir)
        .output()
        .expect("binary launches");
    assert!(
        output.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("artifact dir")
        .map(|entry| {
            let entry = entry.expect("dir entry");
            (
                entry.file_name().into_string().expect("utf8 name"),
                std::fs::read(entry.path()).expect("artifact readable"),
            )
        })
        .collect();
    files.sort();
    (String::from_utf8(output.stdout).expect("utf8 stdout"), files)
}

#[test]
fn criterion_10_repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let (stdout_a, files_a) = full_cli_run(&tmp.path().join("a"));
    let (stdout_b, files_b) = full_cli_run(&tmp.path().join("b"));
    assert_eq!(stdout_a, stdout_b, "stdout bytes differ between runs");
    assert!(!files_a.is_empty());
    assert_eq!(files_a.len(), files_b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in files_a.iter().zip(&files_b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between runs");
    }
    println!("criterion 10: PASS");
}
