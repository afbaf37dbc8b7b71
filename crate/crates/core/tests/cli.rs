use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{"transformer_dim":8,"heads":2,"layers":1,"ff_dim":16,"embed_dim":8}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diet-nlu"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn diet-nlu")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("clean.jsonl");
        ok(&["generate", "--out", p(&data), "--per-intent", "8", "--seed", "1"]);
        let config = dir.path().join("train.json");
        fs::write(&config, format!(r#"{{"epochs":3,"model":{TINY}}}"#)).unwrap();
        Fixture { dir, data, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, dense: &str) -> PathBuf {
        let model = self.path("model.dnlm");
        ok(&[
            "train", "--data", p(&self.data), "--config", p(&self.config), "--dense", dense, "--out", p(&model),
        ]);
        model
    }
}

#[test]
fn stats_json_matches_the_file() {
    let f = Fixture::new();
    let v: Value = serde_json::from_str(&ok(&["stats", "--data", p(&f.data), "--json"])).unwrap();
    assert_eq!(v["stats"]["n_samples"], 80);
    assert_eq!(v["stats"]["n_intents"], 10);
    let total: u64 = v["class_distribution"].as_object().unwrap().values().map(|n| n.as_u64().unwrap()).sum();
    assert_eq!(total, 80);
    let text = ok(&["stats", "--data", p(&f.data)]);
    assert!(text.contains("out-of-scope"));
}

#[test]
fn missing_data_file_exits_2() {
    let out = run(&["stats", "--data", "/no/such/file.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn bad_invocations_exit_1() {
    assert_eq!(run(&["stats"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let f = Fixture::new();
    let out = run(&[
        "train", "--data", p(&f.data), "--model", "tf_baseline", "--dense", "none", "--out", p(&f.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["train", "--data", p(&f.data), "--model", "svm", "--out", p(&f.path("m"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn crossval_single_run_has_zero_std_and_is_reproducible() {
    let f = Fixture::new();
    let (a, b) = (f.path("a.json"), f.path("b.json"));
    for out in [&a, &b] {
        let line = ok(&[
            "crossval", "--data", p(&f.data), "--config", p(&f.config), "--dense", "hash:8:2",
            "--folds", "4", "--runs", "1", "--seed", "5", "--out", p(out),
        ]);
        assert!(line.trim_end().contains("± 0.00"), "{line}");
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["runs"], 1);
    assert_eq!(v["std_micro_f1"], 0.0);
    assert_eq!(v["per_run"][0]["predictions"].as_array().unwrap().len(), 80);
}

#[test]
fn predict_ranks_every_intent() {
    let f = Fixture::new();
    let model = f.train("hash:8:2");
    let v: Value = serde_json::from_str(&ok(&["predict", "--model", p(&model), "--text", "how many flowers"])).unwrap();
    let ranking = v["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 10);
    let sum: f64 = ranking.iter().map(|r| r["confidence"].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    let conf: Vec<f64> = ranking.iter().map(|r| r["confidence"].as_f64().unwrap()).collect();
    assert!(conf.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(v["intent"], ranking[0]["intent"]);
}

#[test]
fn eval_writes_report_and_error_table() {
    let f = Fixture::new();
    let model = f.train("none");
    let report = f.path("eval.json");
    let stdout = ok(&["eval", "--model", p(&model), "--data", p(&f.data), "--out", p(&report), "--errors"]);
    assert!(stdout.contains("Sample Utterance | Intent | Prediction"));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let f1 = v["micro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    let wrong = v["errors"].as_array().unwrap().len();
    assert!((f1 - (80 - wrong) as f64 / 80.0).abs() < 1e-12);
}

#[test]
fn provider_mismatch_exits_2() {
    let f = Fixture::new();
    let model = f.train("hash:8:2");
    let out = run(&["predict", "--model", p(&model), "--text", "yes", "--dense", "hash:8:3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
    let out = run(&["predict", "--model", p(&model), "--text", "yes", "--dense", "hash:8:2"]);
    assert!(out.status.success());
}

#[test]
fn shift_reports_vanished_intents() {
    let f = Fixture::new();
    let shifted = f.path("shifted.jsonl");
    ok(&["generate", "--out", p(&shifted), "--per-intent", "8", "--seed", "1", "--shifted"]);
    let report = f.path("shift.json");
    ok(&["shift", "--a", p(&f.data), "--b", p(&shifted), "--out", p(&report)]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["unseen_a_to_b"], serde_json::json!(["next-step"]));
    assert!(v["b"]["oos_share"].as_f64().unwrap() > v["a"]["oos_share"].as_f64().unwrap());
}

#[test]
fn shaped_corpus_hits_target_totals() {
    let f = Fixture::new();
    let out = f.path("poc.jsonl");
    ok(&["generate", "--out", p(&out), "--shape", "planting-poc"]);
    let v: Value = serde_json::from_str(&ok(&["stats", "--data", p(&out), "--json"])).unwrap();
    assert_eq!(v["stats"]["n_samples"], 1927);
    assert_eq!(v["stats"]["total_words"], 10141);
    assert_eq!(v["stats"]["vocab_size"], 1314);
    assert_eq!(run(&["generate", "--out", p(&out), "--shape", "nope"]).status.code(), Some(1));
}

#[test]
fn export_hash_writes_a_loadable_table() {
    let f = Fixture::new();
    let keys = f.path("keys.txt");
    fs::write(&keys, "flower\nTulip\n\ntulip\n").unwrap();
    let table = f.path("table.dnse");
    let line = ok(&["export-hash", "--keys", p(&keys), "--dim", "6", "--seed", "4", "--out", p(&table)]);
    let desc: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(desc["dim"], 6);
    let provider = diet_nlu::featurizer::load_dense_file(&table).unwrap();
    assert_eq!(provider.len(), 2);
    assert_eq!(provider.lookup("tulip").unwrap(), diet_nlu::featurizer::hash_embed("tulip", 6, 4).as_slice());

    // A model trained on the table reloads it from its recorded path.
    let model = f.train(&format!("file:{}", p(&table)));
    ok(&["predict", "--model", p(&model), "--text", "a tulip"]);
}
