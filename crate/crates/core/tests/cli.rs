use std::fs;
use std::path::Path;
use std::process::Command;

use gemflow::graph_ir::save_model;
use gemflow::models::{conv_only, toy_detector};
use gemflow::pipeline::{run_pipeline, PipelineConfig};
use gemflow::pruner::{PlanStep, PruningPlan};

fn gemflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gemflow")).args(args).output().unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

fn small() -> PipelineConfig {
    PipelineConfig {
        input_size: Some(64),
        budget: 6,
        seed: 7,
        ..PipelineConfig::default()
    }
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&small(), dir.path(), None).unwrap();
    assert!(out.audits.iter().all(|a| a.passed));
    for f in [
        "config.json",
        "pruning_plan.json",
        "pruning_stats.csv",
        "calibration.json",
        "model.quant.json",
        "model.quant.bin",
        "partition.json",
        "tuning_records.jsonl",
        "schedules.json",
        "detections.jsonl",
        "run_report.json",
        "placements.json",
        "audit.json",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!listing(dir.path()).iter().any(|f| f.ends_with(".partial")));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_report.json")).unwrap()).unwrap();
    assert!(report["data"]["efficiency"].as_f64().unwrap() > 0.0);
    assert_eq!(report["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);

    // the quantized model file loads back
    gemflow::graph_ir::load_model(&dir.path().join("model.quant.json")).unwrap();
}

#[test]
fn skip_flags_gate_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        skip_prune: true,
        skip_tune: true,
        ..small()
    };
    run_pipeline(&cfg, dir.path(), None).unwrap();
    let files = listing(dir.path());
    for absent in ["pruning_stats.csv", "pruning_plan.json", "tuning_records.jsonl", "schedules.json"] {
        assert!(!files.contains(&absent.to_string()), "{absent}");
    }
    assert!(files.contains(&"run_report.json".to_string()));
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&small(), a.path(), Some(1)).unwrap();
    run_pipeline(&small(), b.path(), Some(3)).unwrap();
    let files = listing(a.path());
    assert_eq!(files, listing(b.path()));
    for f in files {
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn failed_stage_keeps_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let bad = PruningPlan {
        iterations: vec![PlanStep {
            targets: vec!["no_such_conv".into()],
            rate: 0.5,
        }],
    };
    fs::write(&plan, serde_json::to_string(&bad).unwrap()).unwrap();
    let out = dir.path().join("out");
    let cfg = PipelineConfig {
        plan: Some(plan),
        ..small()
    };
    let err = run_pipeline(&cfg, &out, None).unwrap_err();
    assert!(err.to_string().contains("prune"), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert_eq!(listing(&out), vec!["config.json.partial"]);
}

#[test]
fn corrupt_blob_aborts_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("toy.json");
    let blob = save_model(&toy_detector(64, 1).unwrap(), &model).unwrap();
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 10]).unwrap();
    let out = dir.path().join("out");
    let o = gemflow(&["pipeline", "--model", model.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("load_model") && msg.contains("blob size mismatch"), "{msg}");
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = gemflow(&["pipeline", "--model", "missing.json", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let o = gemflow(&["pipeline", "--power-w", "-1", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = gemflow(&[
        "pipeline",
        "--input-size",
        "64",
        "--budget",
        "4",
        "--emit",
        "csv",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("run_report.csv").exists());
}

#[test]
fn analyze_input_size_rows() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("c.json");
    save_model(&conv_only(640, 0).unwrap(), &model).unwrap();
    let o = gemflow(&["analyze-input-size", "--model", model.to_str().unwrap(), "--sizes", "640,480,100"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let ops = |i: usize| rows[i][1].parse::<u64>().unwrap();
    assert_eq!(ops(1) as f64 / ops(0) as f64, 0.5625);
    assert!(rows[2][1].is_empty() && rows[2][4].contains("multiple of"));

    let o = gemflow(&["analyze-input-size", "--model", "conv-only", "--sizes", "320"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
}
