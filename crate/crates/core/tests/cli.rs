use std::path::Path;
use std::process::{Command, Output};

use fxoverlay::cli::SolutionReport;
use fxoverlay::fixture::{fixture_moments, FIXTURE_CSV, FIXTURE_SCHEMA};
use fxoverlay::problem::assemble;
use fxoverlay::solver::{brute_force, MiqpStatus, Tolerances};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fxoverlay")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_a_checked_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--mu", "1.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("solution.json")).unwrap();
    let report: SolutionReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.status, MiqpStatus::Optimal);
    let d = report.solution.as_ref().unwrap();
    assert!(d.verify(&report.spec, 1e-7).is_empty());
    let budget: f64 = d.class_totals.iter().sum::<f64>() + d.cash;
    assert!((budget - 1.0).abs() < 1e-8);

    let p = assemble(&fixture_moments().unwrap(), &report.spec).unwrap();
    let bf = brute_force(&p, &Tolerances::default()).unwrap();
    let obj = report.objective.unwrap();
    assert!((obj - bf.objective).abs() <= 1e-8 * bf.objective);
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn solve_trace_is_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--mu", "1.2", "--trace"]);
    assert_eq!(o.status.code(), Some(0));
    let log = std::fs::read_to_string(dir.path().join("trace.log")).unwrap();
    assert!(log.lines().count() >= 2);
    assert!(log.starts_with("node\t"));
}

#[test]
fn unreachable_target_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--mu", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let report: SolutionReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(report.status, MiqpStatus::Infeasible);
    assert!(report.solution.is_none());
}

#[test]
fn missing_spread_table_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = run(dir.path(), &["--spreads", missing.to_str().unwrap(), "solve"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("spread table not found"));
}

#[test]
fn bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["frontier", "--mu", "0.5:0.6"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'mu'"));
    let o = run(dir.path(), &["solve", "--G", "9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'G'"));
    let o = run(dir.path(), &["experiment", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("overlay_limit"));
}

#[test]
fn default_frontier_has_131_rows_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path(), &["frontier"]).status.code(), Some(0));
    assert_eq!(run(b.path(), &["frontier", "--jobs", "1"]).status.code(), Some(0));
    let csv_a = std::fs::read_to_string(a.path().join("frontier.csv")).unwrap();
    let csv_b = std::fs::read_to_string(b.path().join("frontier.csv")).unwrap();
    assert_eq!(csv_a.lines().count(), 132);
    assert_eq!(csv_a, csv_b);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["points"], 131);
    assert_eq!(manifest["tolerances"]["feasibility"], 1e-8);
}

#[test]
fn single_point_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["frontier", "--mu", "1.2:1.2:0.01", "--Vu", "50", "--M", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("frontier.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.012,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["V_u"], 0.5);
    assert_eq!(manifest["spec"]["M"], 0.05);
}

#[test]
fn cardinality_experiment_tree() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["experiment", "cardinality", "--mu", "0.8:1.6:0.2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let root = dir.path().join("cardinality");
    for g in 0..=6 {
        assert!(root.join(format!("G={g}")).join("frontier.csv").exists());
    }
    let rel = std::fs::read_to_string(root.join("relative_volatility.csv")).unwrap();
    let mut lines = rel.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "mu");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        for (h, v) in header.iter().zip(&cols).skip(1) {
            if ["G=3", "G=4", "G=5", "G=6"].contains(h) {
                assert!(v.parse::<f64>().unwrap().abs() < 1e-6, "{h} at {}", cols[0]);
            }
        }
    }
}

#[test]
fn ingest_reads_an_external_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("returns.csv");
    let schema = dir.path().join("schema.json");
    std::fs::write(&data, FIXTURE_CSV).unwrap();
    std::fs::write(&schema, FIXTURE_SCHEMA).unwrap();
    let o = run(dir.path(), &["--data", data.to_str().unwrap(), "--schema", schema.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("150 months"));
    assert!(dir.path().join("moments.json").exists());
}
