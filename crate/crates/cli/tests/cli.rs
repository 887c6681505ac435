//! End-to-end checks of the `imboost` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use imboost::data::{make_synthetic, SyntheticSpec};
use serde_json::Value;

/// Small schedule and network so each run takes well under a second.
const QUICK: &[&str] = &[
    "--t0", "2", "--t1", "4", "--t2", "4", "--ta", "2", "--hidden", "8,8", "--score-mc", "2",
];

fn imboost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imboost"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn imboost")
}

fn args<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(QUICK).chain(tail).copied().collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_labeled_csv(path: &Path, seed: u64) {
    let d = make_synthetic(&SyntheticSpec {
        n: 200,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let labels = d.labels.as_ref().unwrap();
    let mut text = String::from("x0,x1,label\n");
    for (i, row) in d.features.rows().into_iter().enumerate() {
        text += &format!("{},{},{}\n", row[0], row[1], u8::from(labels[i]));
    }
    fs::write(path, text).unwrap();
}

fn read_metrics(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("metrics.json")).unwrap()).unwrap()
}

/// Data rows of a table written by bench or sweep, keyed by header.
fn table(text: &str) -> Vec<serde_json::Map<String, Value>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    lines
        .map(|l| {
            let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(l.as_bytes());
            let rec = rdr.records().next().unwrap().unwrap();
            header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                .collect()
        })
        .collect()
}

fn num(row: &serde_json::Map<String, Value>, key: &str) -> f64 {
    row[key].as_str().unwrap().parse().unwrap_or_else(|_| panic!("{key} in {row:?}"))
}

#[test]
fn run_writes_metrics_and_commented_scores() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = imboost(&args(
        &["run", "--synthetic", "default", "--synthetic-n", "200", "--seed", "1"],
        &["--out-dir", out.to_str().unwrap()],
    ));
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_metrics(&out);
    assert!(m["auc_test"].as_f64().is_some_and(|a| (0.0..=1.0).contains(&a)), "{m}");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["strategy"], "mm");
    assert_eq!(m["config"]["t2"], 4);

    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    let first = scores.lines().next().unwrap();
    let config: Value = serde_json::from_str(first.strip_prefix("# config: ").expect("config comment")).unwrap();
    assert_eq!(config["seed"], 1);
    assert_eq!(scores.lines().nth(1).unwrap(), "row_index,split,score,label");
    assert_eq!(scores.lines().count(), 2 + 200);
}

#[test]
fn strategy_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["rd", "cp"] {
        let out = dir.path().join(s);
        let o = imboost(&args(
            &["run", "--synthetic", "ambiguous", "--synthetic-n", "200", "--strategy", s],
            &["--out-dir", out.to_str().unwrap()],
        ));
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(read_metrics(&out)["strategy"], s);
    }
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let unlabeled = dir.path().join("unlabeled.csv");
    fs::write(&unlabeled, "a,b\n0.1,0.2\n0.3,0.4\n0.5,0.1\n").unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let o = imboost(&args(&["run", "--data", unlabeled.to_str().unwrap()], &["--out-dir", out]));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("label"), "{}", stderr(&o));

    let o = imboost(&args(&["run", "--synthetic", "default", "--oracle", "human"], &[]));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    // t2 = 4 is not a multiple of 3 rounds
    let o = imboost(&["run", "--synthetic", "default", "--t2", "4", "--ta", "3", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = imboost(&["run", "--synthetic", "default", "--lambda1", "abc", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = imboost(&["run", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!Path::new(out).join("metrics.json").exists());
}

#[test]
fn bench_table_is_deterministic_with_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_labeled_csv(&data.join("blobs.csv"), 3);
    fs::write(data.join("broken.csv"), "x0,x1,label\n1,2\n").unwrap();
    fs::write(data.join("ignored.txt"), "not a dataset").unwrap();

    let run = |name: &str| {
        let path = dir.path().join(name);
        let o = imboost(&args(
            &["bench", "--data-dir", data.to_str().unwrap(), "--seeds", "0,1,2"],
            &["--out", path.to_str().unwrap()],
        ));
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(path).unwrap()
    };
    let first = run("a.csv");
    assert_eq!(first, run("b.csv"), "bench output must be reproducible");
    assert!(first.starts_with("# config: "));

    let rows = table(&first);
    let ta = 2;
    let runs: Vec<_> = rows.iter().filter(|r| r["dataset"] == "blobs" && r["seed"] != "").collect();
    assert_eq!(runs.len(), 3 * ta);
    let summaries: Vec<_> = rows.iter().filter(|r| r["dataset"] == "blobs" && r["seed"] == "").collect();
    assert_eq!(summaries.len(), ta);
    assert!(rows.iter().any(|r| r["dataset"] == "broken" && r["note"].as_str().unwrap().starts_with("skipped")));

    // Final-round summary against a hand computation of mean and sample std.
    let finals: Vec<f64> = runs.iter().filter(|r| r["round"] == "2").map(|r| num(r, "auc")).collect();
    assert_eq!(finals.len(), 3);
    let mean = (finals[0] + finals[1] + finals[2]) / 3.0;
    let ss: f64 = finals.iter().map(|a| (a - mean) * (a - mean)).sum();
    let std = (ss / 2.0).sqrt();
    let summary = summaries.iter().find(|r| r["round"] == "2").unwrap();
    assert!((num(summary, "auc") - mean).abs() < 1e-12);
    assert!((num(summary, "auc_std") - std).abs() < 1e-12);

    let aggregate = rows.iter().find(|r| r["dataset"] == "average").expect("aggregate row");
    assert!((num(aggregate, "auc") - mean).abs() < 1e-12);
    assert_eq!(num(aggregate, "auc_std"), 0.0);
}

#[test]
fn sweep_rejects_several_parameters() {
    let o = imboost(&args(
        &["sweep", "--synthetic", "default", "--grid", "lambda1=0,1", "--grid", "lambda2=0,1"],
        &[],
    ));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = imboost(&args(&["sweep", "--synthetic", "default", "--grid", "nope=1"], &[]));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn single_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = imboost(&args(
        &["run", "--synthetic", "default", "--synthetic-n", "200", "--seed", "4", "--lambda1", "1.5"],
        &["--out-dir", out.to_str().unwrap()],
    ));
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_metrics(&out);

    let o = imboost(&args(
        &["sweep", "--synthetic", "default", "--synthetic-n", "200", "--grid", "lambda1=1.5", "--seeds", "4"],
        &[],
    ));
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = table(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["seed"], "4");
    for key in ["auc_test", "ap_test", "auc_train", "ap_train"] {
        assert_eq!(num(&rows[0], key), m[key].as_f64().unwrap(), "{key}");
    }
}
