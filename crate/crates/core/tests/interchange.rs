use sae_core::annotate::HeuristicAnnotator;
use sae_core::embed::{
    read_interchange, reasoner_slot, selector_slot, write_interchange, EmbeddingSource, Interchange, ToyConfig, ToyEmbedder,
};
use sae_core::error::EmbedError;
use sae_core::pipeline::{predict, DocChoice, EmbedConfig, ReasonerModel};
use sae_core::reasoner::ReasonerConfig;
use sae_core::synth::{generate, SynthConfig};

fn export(toy: &ToyEmbedder, examples: &[sae_core::data::Example]) -> Interchange {
    let mut store = Interchange::new();
    for ex in examples {
        for d in 0..ex.documents.len() {
            store.insert(&ex.id, &selector_slot(d), toy.selector_input(ex, d).unwrap());
        }
        let gold = ex.gold_indices();
        store.insert(&ex.id, &reasoner_slot(&gold), toy.reasoner_input(ex, &gold).unwrap());
    }
    store
}

#[test]
fn file_round_trip_is_byte_identical_and_lossless() {
    let examples = generate(&SynthConfig { seed: 8, n_examples: 5, ..SynthConfig::default() }).unwrap();
    let toy = ToyEmbedder::new(ToyConfig { dim: 12, ..ToyConfig::default() });
    let store = export(&toy, &examples);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.emb"), dir.path().join("b.emb"));
    write_interchange(&a, &store).unwrap();
    let back = read_interchange(&a).unwrap();
    write_interchange(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(back.len(), store.len());
    assert_eq!(back.dim(), Some(12));
    for (id, slot, m) in store.iter() {
        assert_eq!(back.get(id, slot), Some(m));
    }
}

#[test]
fn interchange_and_toy_sources_give_identical_predictions() {
    let examples = generate(&SynthConfig { seed: 9, n_examples: 6, ..SynthConfig::default() }).unwrap();
    let toy = ToyEmbedder::new(ToyConfig { dim: 12, ..ToyConfig::default() });
    let store = export(&toy, &examples);
    let model = ReasonerModel::new(ReasonerConfig { dim: 12, node_dim: 6, ..ReasonerConfig::default() }, EmbedConfig::default(), 2);
    let (from_toy, f1) = predict(&examples, &DocChoice::Oracle, &model, &toy, &HeuristicAnnotator);
    let (from_file, f2) = predict(&examples, &DocChoice::Oracle, &model, &store, &HeuristicAnnotator);
    assert!(f1.is_empty() && f2.is_empty());
    assert_eq!(from_toy, from_file);
}

#[test]
fn missing_slots_and_damaged_files_are_reported() {
    let examples = generate(&SynthConfig { seed: 10, n_examples: 2, ..SynthConfig::default() }).unwrap();
    let store = Interchange::new();
    assert!(matches!(store.selector_input(&examples[0], 0), Err(EmbedError::MissingSlot { .. })));

    let toy = ToyEmbedder::new(ToyConfig { dim: 4, ..ToyConfig::default() });
    let bytes = export(&toy, &examples).to_bytes();
    assert!(Interchange::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Interchange::from_bytes(b"NOPE").is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_interchange(&dir.path().join("absent.emb")), Err(EmbedError::Io(_))));
}
