use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use diet_nlu::featurizer::{hash_embed, parse_provider_spec, SparseConfig};
use diet_nlu::model::DietConfig;
use diet_nlu::synth::{generate, SynthConfig};
use diet_nlu::trainer::{train, TrainConfig};
use diet_nlu_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = dnlu_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_model(dir: &Path) -> std::path::PathBuf {
    let ds = generate(&SynthConfig { per_intent: 8, ..SynthConfig::default() }).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        model: DietConfig {
            transformer_dim: 8,
            heads: 2,
            layers: 1,
            ff_dim: 16,
            embed_dim: 8,
            ..DietConfig::default()
        },
        ..TrainConfig::default()
    };
    let provider = parse_provider_spec("hash:8:3").unwrap();
    let (model, _) = train(&ds, &cfg, &SparseConfig::default(), provider.as_ref()).unwrap();
    let path = dir.join("tiny.dnlm");
    model.save(&path).unwrap();
    path
}

#[test]
fn load_predict_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(tiny_model(dir.path()).to_str().unwrap());

    let mut model = ptr::null_mut();
    let st = unsafe { dnlu_model_load(path.as_ptr(), ptr::null(), &mut model) };
    assert_eq!(st, DnluStatus::Ok);
    assert!(!model.is_null());
    assert!(dnlu_last_error().is_null());

    let mut n = 0usize;
    assert_eq!(unsafe { dnlu_model_intent_count(model, &mut n) }, DnluStatus::Ok);
    assert_eq!(n, 10);

    let text = c("how many flowers are there");
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dnlu_predict_json(model, text.as_ptr(), &mut json) }, DnluStatus::Ok);
    let s = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { dnlu_string_free(json) };

    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    let ranking = v["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 10);
    let total: f64 = ranking.iter().map(|r| r["confidence"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9, "confidences sum to {total}");
    assert_eq!(v["intent"], ranking[0]["intent"]);

    unsafe { dnlu_model_free(model) };
}

#[test]
fn provider_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(tiny_model(dir.path()).to_str().unwrap());
    let spec = c("hash:8:4");
    let mut model = ptr::null_mut();
    let st = unsafe { dnlu_model_load(path.as_ptr(), spec.as_ptr(), &mut model) };
    assert_eq!(st, DnluStatus::ProviderMismatch);
    assert!(model.is_null());
    assert!(last_error().contains("fingerprint"));
}

#[test]
fn missing_file_is_io() {
    let path = c("/nonexistent/model.dnlm");
    let mut model = ptr::null_mut();
    let st = unsafe { dnlu_model_load(path.as_ptr(), ptr::null(), &mut model) };
    assert_eq!(st, DnluStatus::Io);
    assert!(model.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn garbage_model_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.dnlm");
    std::fs::write(&p, b"not a model at all").unwrap();
    let path = c(p.to_str().unwrap());
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dnlu_model_load(path.as_ptr(), ptr::null(), &mut model) }, DnluStatus::Format);
}

#[test]
fn null_arguments_are_rejected() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dnlu_model_load(ptr::null(), ptr::null(), &mut model) }, DnluStatus::InvalidArgument);
    let path = c("x");
    assert_eq!(
        unsafe { dnlu_model_load(path.as_ptr(), ptr::null(), ptr::null_mut()) },
        DnluStatus::InvalidArgument
    );
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { dnlu_predict_json(ptr::null(), path.as_ptr(), &mut json) },
        DnluStatus::InvalidArgument
    );
    unsafe {
        dnlu_model_free(ptr::null_mut());
        dnlu_string_free(ptr::null_mut());
    }
}

#[test]
fn hash_embed_matches_library() {
    for (key, dim, seed) in [("flower", 16usize, 7u64), ("", 3, 0), ("Ünïcode", 64, u64::MAX)] {
        let mut out = vec![0f32; dim];
        let k = c(key);
        assert_eq!(unsafe { dnlu_hash_embed(k.as_ptr(), dim, seed, out.as_mut_ptr()) }, DnluStatus::Ok);
        assert_eq!(out, hash_embed(key, dim, seed));
    }
    let k = c("a");
    let mut out = [0f32; 1];
    assert_eq!(unsafe { dnlu_hash_embed(k.as_ptr(), 0, 0, out.as_mut_ptr()) }, DnluStatus::InvalidArgument);
}

#[test]
fn dataset_stats() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    std::fs::write(
        &p,
        "{\"id\":\"1\",\"text\":\"yes please\",\"intent\":\"affirm\"}\n{\"id\":\"2\",\"text\":\"no\",\"intent\":\"deny\"}\n",
    )
    .unwrap();
    let path = c(p.to_str().unwrap());
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dnlu_dataset_stats_json(path.as_ptr(), &mut json) }, DnluStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    unsafe { dnlu_string_free(json) };
    assert_eq!(v["stats"]["n_samples"], 2);
    assert_eq!(v["stats"]["total_words"], 3);
    assert_eq!(v["class_distribution"]["deny"], 1);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(dnlu_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/diet_nlu.h")).unwrap();
    for name in [
        "dnlu_model_load",
        "dnlu_model_free",
        "dnlu_model_intent_count",
        "dnlu_predict_json",
        "dnlu_dataset_stats_json",
        "dnlu_hash_embed",
        "dnlu_string_free",
        "dnlu_last_error",
        "dnlu_version",
        "DNLU_STATUS_PROVIDER_MISMATCH",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
