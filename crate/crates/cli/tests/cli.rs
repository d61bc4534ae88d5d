use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_poultrylex");

fn sample() -> String {
    format!("{}/../core/data/sample_corpus.jsonl", env!("CARGO_MANIFEST_DIR"))
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Tiny model so training tests stay fast.
const SMALL: &[&str] = &[
    "--set", "d_model=8", "--set", "n_heads=2", "--set", "n_layers=1", "--set", "epochs=2", "--set", "cnn_filters=4",
];

fn preprocessed(dir: &Path) -> String {
    let out = dir.join("pre");
    assert!(run(&out, &["preprocess", &sample()]).status.success());
    out.join("processed.jsonl").display().to_string()
}

#[test]
fn stage_chain_writes_manifests_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let processed = preprocessed(tmp.path());
    let m = json(&tmp.path().join("pre/manifest.json"));
    assert_eq!(m["command"], "preprocess");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["seed"], 42);
    for a in m["artifacts"].as_array().unwrap() {
        assert!(tmp.path().join("pre").join(a.as_str().unwrap()).exists(), "{a}");
    }

    let o = run(&tmp.path().join("an"), &["analyze", &processed]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("top terms"));
    let a = json(&tmp.path().join("an/analysis.json"));
    assert_eq!(a["n_docs"], 50);

    let o = run(&tmp.path().join("tp"), &["--set", "lda_sweeps=50", "--set", "lda_burn_in=20", "topics", &processed]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("Topic\tTop terms\nTopic #0\t"));
    let trace = std::fs::read_to_string(tmp.path().join("tp/lda_trace.csv")).unwrap();
    assert!(trace.starts_with("sweep,log_likelihood\n0,"));
    assert!(trace.lines().last().unwrap().starts_with("50,"));
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let processed = preprocessed(tmp.path());
    let tr = tmp.path().join("tr");
    let mut args = SMALL.to_vec();
    args.extend(["train", "--model", "cnn", &processed]);
    let o = run(&tr, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = std::fs::read_to_string(tr.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let ckpt = tr.join("checkpoint.json").display().to_string();
    let test = tr.join("test.jsonl").display().to_string();
    let o = run(&tmp.path().join("ev"), &["eval", &ckpt, &test]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("ev/eval_report.json"));
    assert_eq!(r["model_kind"], "cnn");
    assert_eq!(r["n_examples"], 5);
    let roc = std::fs::read_to_string(tmp.path().join("ev/roc.csv")).unwrap();
    assert!(roc.starts_with("class,fpr,tpr,threshold\n"));

    let o = run(&tmp.path().join("pr"), &["predict", &ckpt, "my hens are not sick today"]);
    assert!(o.status.success());
    let p: Value = serde_json::from_slice(&o.stdout).unwrap();
    let total: f64 = p["probabilities"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(p["tokens"].as_array().unwrap().iter().any(|t| t == "not_sick"));
}

#[test]
fn unsupported_model_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let processed = preprocessed(tmp.path());
    let o = run(&tmp.path().join("x"), &["train", "--model", "roberta", &processed]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported model"));
}

#[test]
fn bad_inputs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(run(&out, &["preprocess", "/no/such/file.jsonl"]).status.code(), Some(2));
    assert_eq!(run(&out, &["--set", "nonsense=1", "run-all"]).status.code(), Some(2));
    assert_eq!(run(&out, &["--set", "missing-equals", "run-all"]).status.code(), Some(2));
    assert_eq!(run(&out, &["--set", "split_train=0.9", "run-all"]).status.code(), Some(2));
    assert_eq!(run(&out, &["frobnicate"]).status.code(), Some(2));

    let bad_cfg = tmp.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "d_model = 7\nn_heads = 2\n").unwrap();
    let o = run(&out, &["--config", bad_cfg.to_str().unwrap(), "run-all"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_prediction_text_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let processed = preprocessed(tmp.path());
    let tr = tmp.path().join("tr");
    let mut args = SMALL.to_vec();
    args.extend(["train", &processed]);
    assert!(run(&tr, &args).status.success());
    let ckpt = tr.join("checkpoint.json").display().to_string();
    for text in ["", "   ", "the and of"] {
        let o = run(&tmp.path().join("pr"), &["predict", &ckpt, text]);
        assert_eq!(o.status.code(), Some(2), "{text:?}");
    }
}

#[test]
fn divergent_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let processed = preprocessed(tmp.path());
    let mut args = SMALL.to_vec();
    args.extend(["--set", "learning_rate=1e300", "--set", "epochs=5", "train", &processed]);
    let o = run(&tmp.path().join("tr"), &args);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unlabeled_corpus_needs_weak_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.csv");
    let mut text = String::from("id,text\n");
    for i in 0..30 {
        let body = ["great healthy hens", "sick dying birds", "feed delivery tuesday"][i % 3];
        text.push_str(&format!("u{i},{body} {i}\n"));
    }
    std::fs::write(&raw, text).unwrap();
    let pre = tmp.path().join("pre");
    assert!(run(&pre, &["preprocess", raw.to_str().unwrap()]).status.success());
    let processed = pre.join("processed.jsonl").display().to_string();

    let mut args = SMALL.to_vec();
    args.extend(["train", &processed]);
    assert_eq!(run(&tmp.path().join("a"), &args).status.code(), Some(2));
    let mut args = SMALL.to_vec();
    args.extend(["train", "--weak-labels", &processed]);
    let o = run(&tmp.path().join("b"), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let train = std::fs::read_to_string(tmp.path().join("b/train.jsonl")).unwrap();
    assert!(train.lines().all(|l| l.contains("\"label\"")));
}

#[test]
fn seed_flag_overrides_config_and_changes_split() {
    let tmp = tempfile::tempdir().unwrap();
    let processed = preprocessed(tmp.path());
    let split = |seed: &str, dir: &str| {
        let mut args = SMALL.to_vec();
        args.extend(["--seed", seed, "--set", "epochs=1", "train", &processed]);
        let out = tmp.path().join(dir);
        assert!(run(&out, &args).status.success());
        assert_eq!(json(&out.join("manifest.json"))["seed"].as_u64().unwrap().to_string(), seed);
        std::fs::read_to_string(out.join("test.jsonl")).unwrap()
    };
    assert_eq!(split("5", "a"), split("5", "b"));
    assert_ne!(split("5", "c"), split("6", "d"));
}
