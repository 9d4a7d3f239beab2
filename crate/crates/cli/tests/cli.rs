use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sae-monitor"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn sae-monitor")
}

fn stderr_record(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr should be one line: {text:?}");
    serde_json::from_str(lines[0]).expect("stderr is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One 10-minute healthy file, one fault file and a default-trained model,
/// shared by the tests below.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    model: PathBuf,
}

impl Fixture {
    fn healthy(&self) -> PathBuf {
        self.root.join("corpus/healthy_000.csv")
    }

    fn fault(&self) -> PathBuf {
        self.root.join("corpus/fault_000.csv")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        let out = run(&["gen-data", "--out", s(&corpus), "--healthy", "1", "--faults", "1", "--seed", "5"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let model = root.join("model.json");
        let healthy = corpus.join("healthy_000.csv");
        let out = run(&["train", "--input", s(&healthy), "--out", s(&model)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        Fixture { _dir: dir, root, model }
    })
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    assert_eq!(stderr_record(&out)["error"], "usage");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["detect", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_record(&out)["error"], "usage");
    let out = run(&["train", "--input", "x.csv", "--out", "m.json", "--window", "300"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("fit-thresholds"));
}

#[test]
fn corpus_has_manifest() {
    let f = fixture();
    let manifest: Value = serde_json::from_str(&fs::read_to_string(f.root.join("corpus/manifest.json")).unwrap()).unwrap();
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[1]["kind"], "fault");
    assert_eq!(entries[1]["fault_intervals"].as_array().unwrap().len(), 1);
    assert!(manifest["prng_algorithm"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn training_writes_a_model_with_thresholds() {
    let f = fixture();
    let model: Value = serde_json::from_str(&fs::read_to_string(&f.model).unwrap()).unwrap();
    assert_eq!(model["format_version"], 1);
    assert_eq!(model["spec"]["window_size"], 500);
    assert!(model["thresholds"]["green"].as_f64().unwrap() <= model["thresholds"]["red"].as_f64().unwrap());
    assert_eq!(model["training_metadata"]["config"]["epochs"], 200);
}

#[test]
fn training_is_byte_identical_across_runs() {
    let f = fixture();
    let again = f.root.join("model_again.json");
    let out = run(&["train", "--input", s(&f.healthy()), "--out", s(&again)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(&f.model).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn detect_rejects_mismatched_window() {
    let f = fixture();
    let out = run(&["detect", "--model", s(&f.model), "--input", s(&f.fault()), "--window", "250"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_record(&out);
    assert_eq!(err["error"], "data");
    assert!(err["message"].as_str().unwrap().contains("250"));
}

#[test]
fn detect_writes_ordered_records() {
    let f = fixture();
    let events = f.root.join("events.jsonl");
    let out = run(&["detect", "--model", s(&f.model), "--input", s(&f.fault()), "--out", s(&events)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&events).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let windows: Vec<&Value> = records.iter().filter(|r| r["record"] == "window").collect();
    assert_eq!(windows.len(), 120);
    let origins: Vec<u64> = windows.iter().map(|r| r["window_origin"].as_u64().unwrap()).collect();
    assert!(origins.windows(2).all(|p| p[0] < p[1]));
    for w in &windows {
        let e = w["error"].as_f64().unwrap();
        assert!(e >= 0.0 || e == -0.001);
        assert_eq!(w["stream_id"], "fault_000");
    }
    let segments: Vec<&Value> = records.iter().filter(|r| r["record"] == "segment").collect();
    assert!(!segments.is_empty(), "fault stream should transmit");
    for seg in &segments {
        let (a, b) = (seg["start_index"].as_u64().unwrap(), seg["end_index"].as_u64().unwrap());
        assert_eq!(seg["samples"].as_array().unwrap().len() as u64, b - a);
    }
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["streams"][0]["segments"].as_u64().unwrap(), segments.len() as u64);

    // same inputs, same bytes
    let again = f.root.join("events_again.jsonl");
    run(&["detect", "--model", s(&f.model), "--input", s(&f.fault()), "--out", s(&again)]);
    assert_eq!(fs::read(&events).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn detect_streams_several_inputs() {
    let f = fixture();
    let out = run(&["detect", "--model", s(&f.model), "--input", s(&f.healthy()), s(&f.fault())]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["stream_id"].as_str().unwrap().to_string())
        .collect();
    let first_fault = ids.iter().position(|i| i == "fault_000").unwrap();
    assert!(ids[..first_fault].iter().all(|i| i == "healthy_000"));
    assert!(ids[first_fault..].iter().all(|i| i == "fault_000"));
}

#[test]
fn fit_thresholds_refits_into_a_new_file() {
    let f = fixture();
    let out_path = f.root.join("refit.json");
    let out = run(&[
        "fit-thresholds",
        "--model",
        s(&f.model),
        "--input",
        s(&f.healthy()),
        "--percentile",
        "90",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let refit: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let original: Value = serde_json::from_str(&fs::read_to_string(&f.model).unwrap()).unwrap();
    assert_eq!(refit["thresholds"]["percentile"], 90.0);
    assert_eq!(refit["thresholds"]["red"], original["thresholds"]["red"]);
    assert_eq!(refit["encoders"], original["encoders"]);
    assert!(refit["thresholds"]["green"].as_f64() < original["thresholds"]["green"].as_f64());
}

#[test]
fn plot_data_matches_thresholds() {
    let f = fixture();
    let plot = f.root.join("plot.csv");
    let out = run(&["plot-data", "--model", s(&f.model), "--input", s(&f.fault()), "--out", s(&plot)]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&plot).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("window_index,error,band,green_threshold,red_threshold"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 120);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        let (e, g, red): (f64, f64, f64) = (r[1].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap());
        let band = if e <= g {
            "green"
        } else if e <= red {
            "amber"
        } else {
            "red"
        };
        assert_eq!(r[2], band);
        assert_eq!((r[3], r[4]), (rows[0][3], rows[0][4]));
    }
}

#[test]
fn missing_channel_names_the_alternatives() {
    let f = fixture();
    let out = run(&["detect", "--model", s(&f.model), "--input", s(&f.fault()), "--channel", "xyz"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr_record(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("xyz") && msg.contains("Actual Field Current"), "{msg}");
}

#[test]
fn unreadable_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["detect", "--model", s(&dir.path().join("nope.json")), "--input", "nope.csv"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    let mut text = String::from("time,afc\n");
    for i in 0..50 {
        let v = if i == 40 { "oops".to_string() } else { "1.0".to_string() };
        text.push_str(&format!("{},{v}\n", i as f64 * 0.01));
    }
    fs::write(&bad, text).unwrap();
    let out = run(&["train", "--input", s(&bad), "--channel", "afc", "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_record(&out)["message"].as_str().unwrap().contains("line 42"));

    let truncated = dir.path().join("trunc.json");
    let f = fixture();
    let full = fs::read_to_string(&f.model).unwrap();
    fs::write(&truncated, &full[..full.len() / 2]).unwrap();
    let out = run(&["detect", "--model", s(&truncated), "--input", s(&f.fault())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn correlate_prints_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    let out = run(&[
        "gen-data", "--out", s(&corpus), "--healthy", "1", "--faults", "0", "--duration-s", "30", "--correlated",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["correlate", "--input", s(&corpus.join("healthy_000.csv"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][1], "Actual Field Current");
    for (i, row) in rows.iter().enumerate().skip(1) {
        assert_eq!(row[i], "1.000000");
    }
}

#[test]
fn simulate_reports_lead_times() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "simulate",
        "--healthy",
        "2",
        "--faults",
        "1",
        "--training-streams",
        "2",
        "--duration-s",
        "120",
        "--ramp-s",
        "60",
        "--window",
        "250",
        "--epochs",
        "20",
        "--t-pre-min",
        "0.2",
        "--t-post-min",
        "0.2",
        "--out",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["report"]["faults"].as_array().unwrap().len(), 1);
    assert_eq!(v["report"]["healthy"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["window_size"], 250);
}
