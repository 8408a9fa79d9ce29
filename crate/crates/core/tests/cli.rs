//! Command-line behavior: outputs, flags and exit codes.

mod common;

use std::fs;

use common::*;
use vertid::domain::io::{load_params, save_case};

fn corpus(dir: &std::path::Path) {
    let r = cli(
        dir,
        &["gen", "--seed", "4", "--n-cases", "6", "--true-mass", "0.35", "--adjacent-mass", "0.195", "--concentration", "1", "--out", "data"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn gen_writes_cases_and_detections() {
    let tmp = tempfile::tempdir().unwrap();
    corpus(tmp.path());
    let names: Vec<String> = fs::read_dir(tmp.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 13);
    assert!(names.contains(&"case-0005.case.json".to_string()));
    assert!(names.contains(&"case-0005.detections.jsonl".to_string()));
    assert!(names.contains(&"gen_config.json".to_string()));
}

#[test]
fn score_prints_the_sequence_loss() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cli(tmp.path(), &["score", "--seq", "7,8,9,11,10"]).stdout, "1\n");
    assert_eq!(cli(tmp.path(), &["score", "--seq", "T1,T2,T3"]).stdout, "0\n");
    let bad = cli(tmp.path(), &["score", "--seq", "7,99"]);
    assert_eq!(bad.code, 2);
    assert!(bad.stderr.contains("99"));
}

#[test]
fn supcon_prints_loss_and_gradient() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("b.json"),
        r#"{"vectors":[[1,0],[0.6,0.8],[0,1],[0.8,0.6]],"labels":["T1","T1","T2","T2"],"tau":0.5}"#,
    )
    .unwrap();
    let r = cli(tmp.path(), &["supcon", "--in", "b.json", "--grad"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mut lines = r.stdout.lines();
    let loss: f64 = lines.next().unwrap().strip_prefix("loss ").unwrap().parse().unwrap();
    let grad: Vec<Vec<f64>> = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(grad.len(), 4);
    assert!(loss > 0.0);
    let other = cli(tmp.path(), &["supcon", "--in", "b.json", "--tau", "0.1"]);
    assert_ne!(other.stdout, r.stdout.lines().next().unwrap().to_string() + "\n");
}

#[test]
fn stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    corpus(d);
    let r = cli(d, &["cluster", "--in", "data/case-0000.detections.jsonl", "--out", "centers.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let centers: Vec<vertid::Center> = serde_json::from_str(&fs::read_to_string(d.join("centers.json")).unwrap()).unwrap();
    assert!(!centers.is_empty());

    let r = cli(d, &["uncertainty", "--in", "data/case-0000.case.json", "--out", "u.json", "--metric", "variance"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let case: vertid::Case = vertid::domain::io::load_case(&d.join("u.json")).unwrap();
    assert!(case.vertebrae.iter().all(|v| v.uncertainty.is_some()));

    let r = cli(d, &["train-phi", "--train", "data", "--epochs", "5", "--out", "phi.json", "--dump-csv", "loss.csv"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(fs::read_to_string(d.join("loss.csv")).unwrap().lines().count(), 6);

    let r = cli(
        d,
        &["fuse", "--case", "u.json", "--params", "phi.json", "--hops", "2", "--trace", "trace.json", "--out", "labels.json", "--decode", "constrained"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let trace: vertid::Trace = serde_json::from_str(&fs::read_to_string(d.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace.snapshots.len(), 3);

    let r = cli(d, &["eval", "--cases", "data", "--fuse", "--params", "phi.json", "--out", "rep.json", "--dump-csv", "table.csv"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.starts_with("fused: id_rate "));
    assert_eq!(fs::read_to_string(d.join("table.csv")).unwrap().lines().count(), 25);

    let r = cli(d, &["pipeline", "--dir", "data", "--out", "run", "--params", "phi.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(d.join("run/report.json").exists());
    assert!(d.join("run/case-0003.labels.json").exists());
}

#[test]
fn zero_learning_rate_returns_the_initial_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    corpus(d);
    let r = cli(d, &["train-phi", "--train", "data", "--lr", "0", "--epochs", "3", "--init", "uniform_small", "--seed", "9", "--out", "phi.json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let p: vertid::Params = load_params(&d.join("phi.json")).unwrap();
    let init = vertid::fusion::initial_params(0.1, 3, 5, vertid::DistanceMode::Index, vertid::fusion::PhiInit::UniformSmall, 9).unwrap();
    assert_eq!(p, init);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(cli(d, &["fuse", "--case", "missing.json", "--out", "x.json"]).code, 4);
    assert_eq!(cli(d, &["score"]).code, 2);

    fs::write(d.join("broken.case.json"), "{\"case_id\": 3").unwrap();
    let r = cli(d, &["uncertainty", "--in", "broken.case.json", "--out", "x.json"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("parse error"));

    corpus(d);
    let r = cli(d, &["fuse", "--case", "data/case-0000.case.json", "--window", "4", "--out", "x.json"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("odd-window"));

    fs::create_dir(d.join("hopeless")).unwrap();
    save_case(&hopeless_case(), &d.join("hopeless/a.case.json")).unwrap();
    let r = cli(d, &["train-phi", "--train", "hopeless", "--lr", "1e300", "--epochs", "4", "--window", "3", "--out", "p.json"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("diverged"));
}
