use std::path::Path;
use std::process::{Command, Output};

use pbcore_cli::config::ElectionConfig;
use pbcore_cli::io::{parse_comparison, parse_trace, parse_votes, sha256_hex};
use pbcore_cli::report::{Outcome, RunReport};
use serde_json::Value;

fn pbcore(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbcore"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("PBCORE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> RunReport {
    let output = pbcore(out, args);
    assert!(
        output.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8(output.stdout).unwrap();
    let report = RunReport::from_json(&stdout).unwrap();
    let file = std::fs::read_to_string(out.join(format!("{}.json", args[0]))).unwrap();
    assert_eq!(RunReport::from_json(&file).unwrap(), report);
    report
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn without_timing(text: &str) -> Value {
    let mut v: Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn generated_election_is_funded_in_proportion_to_group_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ok(
        dir.path(),
        &["gen", "--profile", "lone-dissenter", "--voters", "10"],
    );
    let votes = std::fs::read(dir.path().join("votes.csv")).unwrap();
    assert_eq!(
        gen.inputs.votes.as_deref(),
        Some(sha256_hex(&votes).as_str())
    );
    let ballots = parse_votes(votes.as_slice()).unwrap();
    assert_eq!(ballots.rows.len(), 10);
    let share: Vec<f64> = (0..2)
        .map(|j| ballots.rows.iter().filter(|r| r[j] > 0.0).count() as f64 / 10.0)
        .collect();
    let config = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
    ElectionConfig::from_json(&config).unwrap();

    let (v, c) = (
        path(dir.path(), "votes.csv"),
        path(dir.path(), "config.json"),
    );
    let solve = ok(dir.path(), &["solve", "--votes", &v, "--config", &c]);
    assert_eq!(
        solve.inputs.votes.as_deref(),
        Some(sha256_hex(&votes).as_str())
    );
    assert_eq!(
        solve.inputs.config.as_deref(),
        Some(sha256_hex(config.as_bytes()).as_str())
    );
    let x = solve.allocation.fractional.unwrap();
    // Disjoint groups are funded in proportion to their size.
    assert!(
        x.as_slice()
            .iter()
            .zip(&share)
            .all(|(a, b)| (a - b).abs() < 1e-6),
        "{x:?} vs {share:?}"
    );
    let trace =
        parse_trace(std::fs::File::open(dir.path().join("solve_trace.csv")).unwrap()).unwrap();
    assert!(trace.last().unwrap().1 <= 1e-8);

    let report = path(dir.path(), "solve.json");
    let check = ok(
        dir.path(),
        &[
            "check-core",
            "--votes",
            &v,
            "--config",
            &c,
            "--allocation",
            &report,
        ],
    );
    assert!(matches!(
        check.outcome,
        Outcome::CheckCore { in_core: true, .. }
    ));
}

#[test]
fn reruns_are_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen",
            "--profile",
            "k-approval(3)",
            "--voters",
            "60",
            "--items",
            "6",
            "--seed",
            "4",
        ],
    );
    let (v, c) = (
        path(dir.path(), "votes.csv"),
        path(dir.path(), "config.json"),
    );
    // The mechanism takes linear utilities.
    let linear = std::fs::read_to_string(&c)
        .unwrap()
        .replace("\"saturating\"", "\"linear\"");
    std::fs::write(dir.path().join("linear.json"), linear).unwrap();
    let lin = path(dir.path(), "linear.json");
    for command in ["solve-sat", "mechanism", "compare", "analyze"] {
        let config = if command == "mechanism" { &lin } else { &c };
        let args = [command, "--votes", &v, "--config", config, "--seed", "9"];
        let a = String::from_utf8(pbcore(dir.path(), &args).stdout).unwrap();
        let b = String::from_utf8(pbcore(dir.path(), &args).stdout).unwrap();
        assert!(!a.is_empty(), "{command} produced no report");
        assert_eq!(without_timing(&a), without_timing(&b), "{command}");
        assert_eq!(RunReport::from_json(&a).unwrap().seed, 9);
    }
}

#[test]
fn comparison_table_has_the_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen",
            "--profile",
            "boston",
            "--voters",
            "2500",
            "--seed",
            "1",
        ],
    );
    let (v, c) = (
        path(dir.path(), "votes.csv"),
        path(dir.path(), "config.json"),
    );
    let report = ok(dir.path(), &["compare", "--votes", &v, "--config", &c]);
    assert!(report.artifacts.contains(&"compare.csv".to_string()));
    let text = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(text.starts_with("Project,Budget,Votes,Core,Welfare\n"));
    let rows = parse_comparison(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 10);
    let track = rows.iter().find(|r| r.project == "Track").unwrap();
    assert!((track.welfare - 0.91).abs() <= 0.01);
    assert_eq!(track.budget.to_string(), "240000.00");
}

#[test]
fn analysis_writes_a_dendrogram() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen",
            "--profile",
            "block-correlated",
            "--voters",
            "400",
            "--items",
            "4",
        ],
    );
    let v = path(dir.path(), "votes.csv");
    let report = ok(dir.path(), &["analyze", "--votes", &v]);
    let Outcome::Analyze { report: analysis } = report.outcome else {
        panic!("wrong outcome")
    };
    let table = std::fs::read_to_string(dir.path().join("dendrogram.csv")).unwrap();
    assert!(table.starts_with("cluster_a,cluster_b,height,size\n"));
    assert_eq!(table.lines().count(), analysis.merges.len() + 1);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = pbcore(dir.path(), &["solve", "--votes", "/nonexistent/votes.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&missing.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    std::fs::write(
        dir.path().join("bad.csv"),
        "voter_id,a,b\nv1,1,0\nv2,1,oops\n",
    )
    .unwrap();
    let bad = pbcore(
        dir.path(),
        &["solve", "--votes", &path(dir.path(), "bad.csv")],
    );
    assert_eq!(bad.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "parse");
    assert_eq!(err["error"]["line"], 3);
    assert_eq!(err["error"]["column"], 3);
}

#[test]
fn output_directory_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_pbcore"))
        .args([
            "gen",
            "--profile",
            "disjoint-groups",
            "--voters",
            "20",
            "--items",
            "3",
        ])
        .env("PBCORE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    for file in ["votes.csv", "config.json", "gen.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
}
