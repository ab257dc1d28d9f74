use sae_core::annotate::HeuristicAnnotator;
use sae_core::embed::{ToyConfig, ToyEmbedder};
use sae_core::pipeline::gold_reasoner_inputs;
use sae_core::reasoner::ReasonerConfig;
use sae_core::synth::{generate, SynthConfig};

#[test]
fn benchmark_inputs_build() {
    let examples = generate(&SynthConfig { seed: 3, n_examples: 4, ..SynthConfig::default() }).unwrap();
    let emb = ToyEmbedder::new(ToyConfig::default());
    let inputs = gold_reasoner_inputs(&examples, &emb, &HeuristicAnnotator, &ReasonerConfig::default());
    assert_eq!(inputs.len(), 4);
    assert!(inputs.iter().all(|i| !i.graph.is_empty()));
}
