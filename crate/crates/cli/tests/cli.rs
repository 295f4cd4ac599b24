use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn nmslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmslab")).args(args).output().expect("spawn nmslab")
}

fn ok(args: &[&str]) -> Output {
    let out = nmslab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn entries(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

fn synth(dir: &Path, name: &str, images: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    ok(&["synth", "--images", &images.to_string(), "--seed", &seed.to_string(), "--out", s(&path)]);
    path
}

const TINY_CONFIG: &str = "[model]\nnum_blocks = 2\nfeature_dim = 8\nreduced_dim = 4\npair_feature_dim = 4\n\n[train]\niterations = 30\nlr_schedule = []\ncheckpoint_every = 10\n";

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read(synth(dir.path(), "a.jsonl", 5, 7)).unwrap();
    let b = fs::read(synth(dir.path(), "b.jsonl", 5, 7)).unwrap();
    let c = fs::read(synth(dir.path(), "c.jsonl", 5, 8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn zero_images_is_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = synth(dir.path(), "empty.jsonl", 0, 0);
    assert!(fs::read(path).unwrap().is_empty());
}

#[test]
fn out_of_range_theta_is_a_usage_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "in.jsonl", 2, 0);
    let before = entries(dir.path());
    let out = nmslab(&["nms", "--theta", "1.0", "--in", s(&input), "--out", s(&dir.path().join("out.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert_eq!(entries(dir.path()), before);
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nmslab(&[
        "eval",
        "--in",
        s(&dir.path().join("absent.jsonl")),
        "--report",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&out), 3);
    assert!(entries(dir.path()).is_empty());
}

#[test]
fn unknown_config_key_is_a_config_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "train.jsonl", 2, 0);
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[train]\niterations = 10\nlearning_rate = 0.1\n").unwrap();
    let before = entries(dir.path());
    let out = nmslab(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&dir.path().join("m.ckpt"))]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(entries(dir.path()), before);
}

#[test]
fn class_count_mismatch_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "train.jsonl", 3, 0);
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY_CONFIG).unwrap();
    let model = dir.path().join("m.ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&model), "--log-every", "0"]);

    let two_class: String = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .map(|line| {
            let mut rec: Value = serde_json::from_str(line).unwrap();
            for d in rec["detections"].as_array_mut().unwrap() {
                d["scores"].as_array_mut().unwrap().push(Value::from(0.0));
            }
            format!("{rec}\n")
        })
        .collect();
    let input = dir.path().join("two.jsonl");
    fs::write(&input, two_class).unwrap();
    let before = entries(dir.path());
    let out = nmslab(&["rescore", "--model", s(&model), "--in", s(&input), "--out", s(&dir.path().join("r.jsonl"))]);
    assert_eq!(code(&out), 6, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(entries(dir.path()), before);
}

#[test]
fn default_sweep_has_twenty_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "in.jsonl", 4, 1);
    let table = dir.path().join("sweep.csv");
    let out = ok(&["sweep", "--in", s(&input), "--out", s(&table)]);
    let csv = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "theta,ap50,ap50_occ_0_0.5,ap50_occ_0.5_1");
    assert_eq!(lines.len(), 21);
    assert!(lines[1].starts_with("0,"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("best theta"));
}

#[test]
fn detections_on_every_object_score_perfect_ap() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synth(dir.path(), "in.jsonl", 3, 2);
    let perfect: String = fs::read_to_string(&raw)
        .unwrap()
        .lines()
        .map(|line| {
            let mut rec: Value = serde_json::from_str(line).unwrap();
            let dets: Vec<Value> = rec["ground_truths"]
                .as_array()
                .unwrap()
                .iter()
                .map(|g| serde_json::json!({ "id": g["id"], "box": g["box"], "scores": [0.9], "class_id": 0 }))
                .collect();
            rec["detections"] = Value::from(dets);
            format!("{rec}\n")
        })
        .collect();
    let input = dir.path().join("perfect.jsonl");
    fs::write(&input, perfect).unwrap();
    let report = dir.path().join("report.json");
    let out = ok(&["eval", "--in", s(&input), "--report", s(&report)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("AP@0.50 1.0000"), "{stdout}");
    assert!(stdout.contains("AP@0.95 1.0000"), "{stdout}");
    assert!(dir.path().join("report.json.pr.csv").exists());
}

#[test]
fn synth_train_rescore_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train.jsonl", 6, 1);
    let test = synth(dir.path(), "test.jsonl", 3, 2);
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY_CONFIG).unwrap();
    let model = dir.path().join("m.ckpt");
    ok(&["train", "--data", s(&train), "--config", s(&config), "--out", s(&model), "--log-every", "0"]);
    assert!(model.exists());
    assert!(dir.path().join("m.ckpt.json").exists());
    assert!(!dir.path().join("m.ckpt.resume").exists());
    let history = fs::read_to_string(dir.path().join("m.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 31);

    let rescored = dir.path().join("rescored.jsonl");
    ok(&["rescore", "--model", s(&model), "--in", s(&test), "--out", s(&rescored)]);
    let report = dir.path().join("report.json");
    ok(&["eval", "--in", s(&rescored), "--report", s(&report)]);
    let parsed: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(parsed.is_object());

    let manifest: Value =
        serde_json::from_slice(&fs::read(dir.path().join("m.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["outputs"].as_array().unwrap().len() >= 3);
    assert!(!entries(dir.path()).iter().any(|n| n.starts_with(".nmslab-")));
}
