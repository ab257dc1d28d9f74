use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sae_core::data::parse_dataset;
use sae_core::embed::{reasoner_slot, selector_slot, write_interchange, EmbeddingSource, Interchange, ToyConfig, ToyEmbedder};
use sae_core::metrics::Predictions;

fn sae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sae"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// Tiny synthetic split plus a one-epoch reasoner and selector at width 16.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let out = sae(&["--seed", "3", "synth", "--out", p(&root), "--n", "40"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for (cmd, file) in [("train-selector", "sel.ckpt"), ("train-reasoner", "rsn.ckpt")] {
            let out = sae(&[
                "--seed", "3", "--dim", "16", cmd, "--data", p(&root.join("train.json")), "--out",
                p(&root.join(file)), "--epochs", "1",
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(sae(&["predict", "--bogus"]).status.code(), Some(2));
    assert_eq!(sae(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let out = sae(&["eval", "--pred", "/nonexistent/p.json", "--gold", "/nonexistent/g.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let f = Fixture::new();
    let gold = parse_dataset(&std::fs::read(f.path("dev.json")).unwrap()).unwrap();
    let mut preds = Predictions::default();
    for ex in &gold {
        preds.answer.insert(ex.id.clone(), ex.answer_text.clone());
        preds.sp.insert(ex.id.clone(), ex.supporting_facts.iter().map(|s| (s.title.clone(), s.sentence)).collect());
    }
    std::fs::write(f.path("gold_pred.json"), serde_json::to_vec(&preds).unwrap()).unwrap();
    let out = sae(&[
        "eval", "--pred", p(&f.path("gold_pred.json")), "--gold", p(&f.path("dev.json")), "--by-type", "--out",
        p(&f.path("report.json")),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("report.json")).unwrap()).unwrap();
    for key in ["ans_em", "ans_f1", "sup_em", "sup_f1", "joint_em", "joint_f1"] {
        assert_eq!(report[key], 1.0, "{key}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("bridge"));
}

#[test]
fn predictions_are_deterministic_and_evaluable() {
    let f = Fixture::new();
    let mut files = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = sae(&[
            "predict", "--data", p(&f.path("dev.json")), "--selector", p(&f.path("sel.ckpt")), "--reasoner",
            p(&f.path("rsn.ckpt")), "--out", p(&f.path(name)),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(std::fs::read(f.path(name)).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let preds: Predictions = serde_json::from_slice(&files[0]).unwrap();
    assert_eq!(preds.answer.len(), 8);
    assert!(preds.selected.values().all(|t| t.len() == 2));
    let out = sae(&["eval", "--pred", p(&f.path("a.json")), "--gold", p(&f.path("dev.json"))]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("EM_S"));
}

#[test]
fn empty_dataset_gives_empty_predictions() {
    let f = Fixture::new();
    std::fs::write(f.path("empty.json"), "[]").unwrap();
    let out = sae(&[
        "predict", "--oracle-docs", "--data", p(&f.path("empty.json")), "--reasoner", p(&f.path("rsn.ckpt")), "--out",
        p(&f.path("empty_pred.json")),
    ]);
    assert!(out.status.success());
    let preds: Predictions = serde_json::from_slice(&std::fs::read(f.path("empty_pred.json")).unwrap()).unwrap();
    assert_eq!(preds, Predictions::default());
}

#[test]
fn predict_without_selector_needs_oracle_flag() {
    let f = Fixture::new();
    let out = sae(&["predict", "--data", p(&f.path("dev.json")), "--reasoner", p(&f.path("rsn.ckpt")), "--out", p(&f.path("x.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn interchange_embeddings_run_end_to_end_and_missing_slots_flag_partial_failure() {
    let f = Fixture::new();
    let toy = ToyEmbedder::new(ToyConfig { dim: 16, ..ToyConfig::default() });
    let build = |data: &str, skip: Option<usize>| {
        let examples = parse_dataset(&std::fs::read(f.path(data)).unwrap()).unwrap();
        let mut store = Interchange::new();
        for (i, ex) in examples.iter().enumerate() {
            for d in 0..ex.documents.len() {
                store.insert(&ex.id, &selector_slot(d), toy.selector_input(ex, d).unwrap());
            }
            if Some(i) != skip {
                let gold = ex.gold_indices();
                store.insert(&ex.id, &reasoner_slot(&gold), toy.reasoner_input(ex, &gold).unwrap());
            }
        }
        store
    };
    write_interchange(&f.path("train.emb"), &build("train.json", None)).unwrap();
    write_interchange(&f.path("dev_full.emb"), &build("dev.json", None)).unwrap();
    write_interchange(&f.path("dev_gap.emb"), &build("dev.json", Some(0))).unwrap();

    let out = sae(&[
        "--embeddings", p(&f.path("train.emb")), "train-reasoner", "--data", p(&f.path("train.json")), "--out",
        p(&f.path("ix.ckpt")), "--epochs", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let predict = |emb: &str, out: &str| {
        sae(&[
            "--embeddings", p(&f.path(emb)), "predict", "--oracle-docs", "--data", p(&f.path("dev.json")), "--reasoner",
            p(&f.path("ix.ckpt")), "--out", p(&f.path(out)),
        ])
    };
    let full = predict("dev_full.emb", "full.json");
    assert!(full.status.success(), "{}", String::from_utf8_lossy(&full.stderr));
    let gap = predict("dev_gap.emb", "gap.json");
    assert_eq!(gap.status.code(), Some(1));
    let preds: Predictions = serde_json::from_slice(&std::fs::read(f.path("gap.json")).unwrap()).unwrap();
    assert_eq!(preds.answer.len(), 7);
    assert!(String::from_utf8_lossy(&gap.stderr).contains("no embedding slot"));
    let out = sae(&["eval", "--pred", p(&f.path("gap.json")), "--gold", p(&f.path("dev.json"))]);
    assert!(out.status.success());
}

#[test]
fn dumps_emit_json() {
    let f = Fixture::new();
    let dev = parse_dataset(&std::fs::read(f.path("dev.json")).unwrap()).unwrap();
    let id = dev[0].id.as_str();
    let out = sae(&["graph-dump", "--data", p(&f.path("dev.json")), "--example-id", id, "--edges", "2,3"]);
    assert!(out.status.success());
    let graph: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(graph["edges"].as_array().unwrap().iter().all(|e| e["type"] != 1));
    let out = sae(&[
        "attn-dump", "--data", p(&f.path("dev.json")), "--reasoner", p(&f.path("rsn.ckpt")), "--example-id", id, "--out",
        p(&f.path("attn.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let attn: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("attn.json")).unwrap()).unwrap();
    for s in attn["sentences"].as_array().unwrap() {
        let total: f64 = s["alpha"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
    assert_eq!(sae(&["graph-dump", "--data", p(&f.path("dev.json")), "--example-id", "nope"]).status.code(), Some(1));
}

#[test]
fn config_file_is_applied_and_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"synth": {"n_examples": 15, "n_distractors": 3}}"#).unwrap();
    let out = sae(&["--config", p(&cfg), "synth", "--out", p(dir.path()), "--distractors", "4"]);
    assert!(out.status.success());
    let train = parse_dataset(&std::fs::read(dir.path().join("train.json")).unwrap()).unwrap();
    assert_eq!(train.len(), 15);
    assert!(train.iter().all(|e| e.documents.len() == 6));
}
