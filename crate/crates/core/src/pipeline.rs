//! Training loops, inference and model files for the select-then-reason pipeline.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::annotate::Annotator;
use crate::checkpoint::Checkpoint;
use crate::data::Example;
use crate::diff::{Adam, AdamConfig, Matrix, ParamStore};
use crate::embed::{read_interchange, EmbeddingSource, TokenLayout, ToyConfig, ToyEmbedder};
use crate::error::{CheckpointError, EmbedError, ModelError};
use crate::graph::{graph_for_layout, SentenceGraph};
use crate::metrics::{selector_metrics, Predictions, SelectionCase, SelectorReport};
use crate::reasoner::{LossBreakdown, Reasoner, ReasonerConfig, ReasonerLabels, ReasonerPrediction};
use crate::rng::stream;
use crate::selector::{Selector, SelectorConfig};

/// Where token matrices come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EmbedConfig {
    Toy(ToyConfig),
    Interchange { path: PathBuf },
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig::Toy(ToyConfig::default())
    }
}

impl EmbedConfig {
    pub fn open(&self) -> Result<Box<dyn EmbeddingSource>, EmbedError> {
        Ok(match self {
            EmbedConfig::Toy(cfg) => Box::new(ToyEmbedder::new(*cfg)),
            EmbedConfig::Interchange { path } => Box::new(read_interchange(path)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub examples: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Optim(#[from] crate::error::OptimError),
    #[error("no usable training examples")]
    NoData,
}

/// Stacks the `[CLS]` summaries of every document of `ex`.
pub fn selector_summaries(ex: &Example, source: &dyn EmbeddingSource) -> Result<Matrix, EmbedError> {
    let rows = (0..ex.documents.len())
        .map(|d| source.selector_input(ex, d).map(|m| m.summary()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_rows(&rows))
}

fn run_epochs<T>(
    items: &[T],
    store: &mut ParamStore,
    train: &TrainConfig,
    stream_name: &str,
    mut step: impl FnMut(&T, &ParamStore) -> Result<(crate::diff::Graph, crate::diff::Var), ModelError>,
    on_epoch: &mut dyn FnMut(EpochStats),
) -> Result<(), PipelineError> {
    if items.is_empty() {
        return Err(PipelineError::NoData);
    }
    let mut adam = Adam::new(
        store,
        AdamConfig {
            lr: train.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = stream(train.seed, stream_name);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let batch = train.batch_size.max(1);
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            for &i in chunk {
                let (g, loss) = step(&items[i], store)?;
                total += g.value(loss).item();
                g.backward(loss).accumulate_into(&g, store, 1.0 / chunk.len() as f64);
            }
            adam.step(store)?;
        }
        on_epoch(EpochStats {
            epoch: epoch + 1,
            mean_loss: total / items.len() as f64,
            examples: items.len(),
        });
    }
    Ok(())
}

/// Selector with its parameters and the embedding it was trained on.
#[derive(Clone, Debug)]
pub struct SelectorModel {
    pub selector: Selector,
    pub store: ParamStore,
    pub embed: EmbedConfig,
}

impl SelectorModel {
    pub fn new(config: SelectorConfig, embed: EmbedConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let selector = Selector::new(config, &mut store, &mut stream(seed, "selector/init"));
        Self { selector, store, embed }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            "selector",
            serde_json::to_value(self.selector.config).expect("config serializes"),
            serde_json::to_value(&self.embed).expect("embedding config serializes"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        if ck.header.kind != "selector" {
            return Err(CheckpointError::Mismatch(format!("expected a selector, found {}", ck.header.kind)));
        }
        let config: SelectorConfig = serde_json::from_value(ck.header.config.clone())
            .map_err(|e| CheckpointError::Format(format!("selector config: {e}")))?;
        let embed: EmbedConfig = serde_json::from_value(ck.header.embed.clone())
            .map_err(|e| CheckpointError::Format(format!("embedding config: {e}")))?;
        let mut model = Self::new(config, embed, 0);
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }

    /// Top-k document indices in rank order.
    pub fn select(&self, ex: &Example, source: &dyn EmbeddingSource, k: usize) -> Result<Vec<usize>, PipelineError> {
        let x = selector_summaries(ex, source)?;
        Ok(self.selector.select(&self.store, &x, k)?.selected)
    }
}

pub fn train_selector(
    examples: &[Example],
    source: &dyn EmbeddingSource,
    config: SelectorConfig,
    embed: EmbedConfig,
    train: &TrainConfig,
    on_epoch: &mut dyn FnMut(EpochStats),
) -> Result<SelectorModel, PipelineError> {
    let mut model = SelectorModel::new(config, embed, train.seed);
    let mut items = Vec::new();
    for ex in examples {
        if ex.documents.len() < 2 {
            continue;
        }
        match selector_summaries(ex, source) {
            Ok(x) => items.push((x, ex.documents.iter().map(|d| d.score).collect::<Vec<u8>>())),
            Err(e) => log::warn!("example {}: skipped for selector training: {e}", ex.id),
        }
    }
    let selector = model.selector.clone();
    run_epochs(
        &items,
        &mut model.store,
        train,
        "selector/shuffle",
        |(x, scores), store| {
            let mut fwd = selector.forward(store, x)?;
            let loss = selector.loss(&mut fwd, scores)?;
            Ok((fwd.graph, loss))
        },
        on_epoch,
    )?;
    Ok(model)
}

/// Selector metrics of top-k selection over `examples`, with the per-example selections.
pub fn evaluate_selector(
    model: &SelectorModel,
    examples: &[Example],
    source: &dyn EmbeddingSource,
    k: usize,
) -> Result<(SelectorReport, Vec<Vec<usize>>), PipelineError> {
    let mut cases = Vec::with_capacity(examples.len());
    let mut picks = Vec::with_capacity(examples.len());
    for ex in examples {
        let chosen = model.select(ex, source, k)?;
        cases.push(SelectionCase::from_example(ex, &chosen));
        picks.push(chosen);
    }
    Ok((selector_metrics(&cases), picks))
}

/// Everything the reasoner consumes for one example and document choice.
#[derive(Clone, Debug)]
pub struct ReasonerInput {
    pub example: usize,
    pub h: Matrix,
    pub layout: TokenLayout,
    pub graph: SentenceGraph,
    pub labels: ReasonerLabels,
}

/// Builds reasoner input over `docs`, which are sorted into dataset order.
pub fn reasoner_input(
    index: usize,
    ex: &Example,
    docs: &[usize],
    source: &dyn EmbeddingSource,
    annotator: &dyn Annotator,
    config: &ReasonerConfig,
) -> Result<ReasonerInput, PipelineError> {
    let mut docs = docs.to_vec();
    docs.sort_unstable();
    docs.dedup();
    let m = source.reasoner_input(ex, &docs)?;
    let graph = graph_for_layout(ex, &m.layout, annotator, config.edges);
    if graph.is_empty() {
        return Err(ModelError::Empty(format!("example {} has no sentences in its context", ex.id)).into());
    }
    let span = match crate::data::locate_answer_span(ex, &m.layout) {
        Ok(label) => label.span,
        Err(e) => {
            log::warn!("{e}; span loss masked");
            None
        }
    };
    let labels = ReasonerLabels::new(ex, &graph, span);
    Ok(ReasonerInput {
        example: index,
        h: m.to_matrix(),
        layout: m.layout,
        graph,
        labels,
    })
}

/// Reasoner inputs over each example's gold documents; failures are logged and skipped.
pub fn gold_reasoner_inputs(
    examples: &[Example],
    source: &dyn EmbeddingSource,
    annotator: &dyn Annotator,
    config: &ReasonerConfig,
) -> Vec<ReasonerInput> {
    examples
        .iter()
        .enumerate()
        .filter_map(|(i, ex)| {
            reasoner_input(i, ex, &ex.gold_indices(), source, annotator, config)
                .map_err(|e| log::warn!("example {}: skipped: {e}", ex.id))
                .ok()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ReasonerModel {
    pub reasoner: Reasoner,
    pub store: ParamStore,
    pub embed: EmbedConfig,
}

impl ReasonerModel {
    pub fn new(config: ReasonerConfig, embed: EmbedConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let reasoner = Reasoner::new(config, &mut store, &mut stream(seed, "reasoner/init"));
        Self { reasoner, store, embed }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            "reasoner",
            serde_json::to_value(self.reasoner.config).expect("config serializes"),
            serde_json::to_value(&self.embed).expect("embedding config serializes"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        if ck.header.kind != "reasoner" {
            return Err(CheckpointError::Mismatch(format!("expected a reasoner, found {}", ck.header.kind)));
        }
        let config: ReasonerConfig = serde_json::from_value(ck.header.config.clone())
            .map_err(|e| CheckpointError::Format(format!("reasoner config: {e}")))?;
        let embed: EmbedConfig = serde_json::from_value(ck.header.embed.clone())
            .map_err(|e| CheckpointError::Format(format!("embedding config: {e}")))?;
        let mut model = Self::new(config, embed, 0);
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }

    pub fn loss(&self, input: &ReasonerInput) -> Result<LossBreakdown, ModelError> {
        let mut fwd = self.reasoner.forward(&self.store, &input.h, &input.layout, &input.graph)?;
        Ok(self.reasoner.loss(&mut fwd, &input.labels)?.1)
    }

    /// Pooling weights and attention for every sentence node of `input`.
    pub fn attention(&self, input: &ReasonerInput) -> Result<Vec<SentenceAttention>, ModelError> {
        let fwd = self.reasoner.forward(&self.store, &input.h, &input.layout, &input.graph)?;
        let node_attention = fwd.graph.value(fwd.node_attention);
        let support = fwd.graph.value(fwd.support_logits);
        Ok(input
            .graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let span = &input.layout.sentence_spans[node.span];
                SentenceAttention {
                    title: node.title.clone(),
                    sentence: node.sentence,
                    tokens: input.layout.tokens[span.start..span.end].to_vec(),
                    alpha: fwd.graph.value(fwd.alphas[i]).data().to_vec(),
                    node_attention: node_attention.data()[i],
                    support_prob: crate::diff::sigmoid(support.data()[i]),
                }
            })
            .collect())
    }

    pub fn predict(&self, ex: &Example, input: &ReasonerInput) -> Result<ReasonerPrediction, ModelError> {
        self.reasoner.predict(&self.store, ex, &input.h, &input.layout, &input.graph)
    }
}

/// Attention exported for one sentence node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceAttention {
    pub title: String,
    pub sentence: usize,
    pub tokens: Vec<String>,
    /// Token pooling weights, summing to one.
    pub alpha: Vec<f64>,
    /// Weight of this node in the answer-type head.
    pub node_attention: f64,
    pub support_prob: f64,
}

pub fn train_reasoner(
    inputs: &[ReasonerInput],
    config: ReasonerConfig,
    embed: EmbedConfig,
    train: &TrainConfig,
    on_epoch: &mut dyn FnMut(EpochStats),
) -> Result<ReasonerModel, PipelineError> {
    let mut model = ReasonerModel::new(config, embed, train.seed);
    let reasoner = model.reasoner.clone();
    run_epochs(
        inputs,
        &mut model.store,
        train,
        "reasoner/shuffle",
        |input, store| {
            let mut fwd = reasoner.forward(store, &input.h, &input.layout, &input.graph)?;
            let (loss, _) = reasoner.loss(&mut fwd, &input.labels)?;
            Ok((fwd.graph, loss))
        },
        on_epoch,
    )?;
    Ok(model)
}

/// How the reasoner context is chosen at prediction time.
pub enum DocChoice<'a> {
    /// Annotated gold documents.
    Oracle,
    /// Top-k documents from a trained selector.
    Selector(&'a SelectorModel, usize),
}

/// Per-example failure recorded during prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictFailure {
    pub id: String,
    pub error: String,
}

pub fn predict(
    examples: &[Example],
    choice: &DocChoice,
    reasoner: &ReasonerModel,
    source: &dyn EmbeddingSource,
    annotator: &dyn Annotator,
) -> (Predictions, Vec<PredictFailure>) {
    let mut preds = Predictions::default();
    let mut failures = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let result = (|| -> Result<(Vec<usize>, ReasonerPrediction), PipelineError> {
            let mut docs = match choice {
                DocChoice::Oracle => ex.gold_indices(),
                DocChoice::Selector(sel, k) => sel.select(ex, source, *k)?,
            };
            docs.sort_unstable();
            let input = reasoner_input(i, ex, &docs, source, annotator, &reasoner.reasoner.config)?;
            Ok((docs, reasoner.predict(ex, &input)?))
        })();
        match result {
            Ok((docs, p)) => {
                preds.answer.insert(ex.id.clone(), p.answer);
                preds.sp.insert(
                    ex.id.clone(),
                    p.support.into_iter().map(|f| (f.title, f.sentence)).collect(),
                );
                if matches!(choice, DocChoice::Selector(..)) {
                    preds.selected.insert(
                        ex.id.clone(),
                        docs.iter().map(|&d| ex.documents[d].title.clone()).collect(),
                    );
                }
            }
            Err(e) => {
                log::warn!("example {}: prediction failed: {e}", ex.id);
                failures.push(PredictFailure {
                    id: ex.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    (preds, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::HeuristicAnnotator;
    use crate::synth::{generate, SynthConfig};

    fn data(n: usize, seed: u64) -> Vec<Example> {
        generate(&SynthConfig { seed, n_examples: n, ..SynthConfig::default() }).unwrap()
    }

    fn toy(dim: usize) -> (EmbedConfig, ToyEmbedder) {
        let cfg = ToyConfig { dim, ..ToyConfig::default() };
        (EmbedConfig::Toy(cfg), ToyEmbedder::new(cfg))
    }

    #[test]
    fn reasoner_loss_decreases_over_first_steps() {
        let (_, emb) = toy(16);
        let examples = data(8, 3);
        let config = ReasonerConfig { dim: 16, node_dim: 16, ..Default::default() };
        let inputs = gold_reasoner_inputs(&examples, &emb, &HeuristicAnnotator, &config);
        let mut decreasing_runs = 0;
        for seed in 0..10 {
            let mut model = ReasonerModel::new(config, EmbedConfig::default(), seed);
            let mut adam = Adam::new(&model.store, AdamConfig { lr: 1e-3, ..Default::default() });
            let mut losses = Vec::new();
            for _ in 0..=10 {
                let mut total = 0.0;
                for input in &inputs {
                    let mut fwd = model.reasoner.forward(&model.store, &input.h, &input.layout, &input.graph).unwrap();
                    let (loss, parts) = model.reasoner.loss(&mut fwd, &input.labels).unwrap();
                    total += parts.total;
                    fwd.graph.backward(loss).accumulate_into(&fwd.graph, &mut model.store, 1.0 / inputs.len() as f64);
                }
                losses.push(total);
                adam.step(&mut model.store).unwrap();
            }
            if losses.windows(2).all(|w| w[1] < w[0]) {
                decreasing_runs += 1;
            }
        }
        assert!(decreasing_runs >= 9, "{decreasing_runs} of 10 runs decreased monotonically");
    }

    #[test]
    fn checkpoints_reproduce_predictions() {
        let (embed_cfg, emb) = toy(16);
        let examples = data(6, 4);
        let train = TrainConfig { epochs: 1, ..Default::default() };
        let sel = train_selector(&examples, &emb, SelectorConfig { dim: 16, ..Default::default() }, embed_cfg.clone(), &train, &mut |_| {}).unwrap();
        let config = ReasonerConfig { dim: 16, node_dim: 16, ..Default::default() };
        let inputs = gold_reasoner_inputs(&examples, &emb, &HeuristicAnnotator, &config);
        let rsn = train_reasoner(&inputs, config, embed_cfg, &train, &mut |_| {}).unwrap();

        let sel2 = SelectorModel::from_checkpoint(&Checkpoint::from_bytes(&sel.to_checkpoint().to_bytes()).unwrap()).unwrap();
        let rsn2 = ReasonerModel::from_checkpoint(&Checkpoint::from_bytes(&rsn.to_checkpoint().to_bytes()).unwrap()).unwrap();
        let (a, fa) = predict(&examples, &DocChoice::Selector(&sel, 2), &rsn, &emb, &HeuristicAnnotator);
        let (b, fb) = predict(&examples, &DocChoice::Selector(&sel2, 2), &rsn2, &emb, &HeuristicAnnotator);
        assert!(fa.is_empty() && fb.is_empty());
        assert_eq!(a, b);
        assert_eq!(a.answer.len(), 6);
        assert!(ReasonerModel::from_checkpoint(&sel.to_checkpoint()).is_err());
    }

    #[test]
    fn attention_export_is_normalized() {
        let (embed_cfg, emb) = toy(16);
        let examples = data(2, 5);
        let config = ReasonerConfig { dim: 16, node_dim: 16, ..Default::default() };
        let inputs = gold_reasoner_inputs(&examples, &emb, &HeuristicAnnotator, &config);
        let model = ReasonerModel::new(config, embed_cfg, 1);
        let rows = model.attention(&inputs[0]).unwrap();
        assert_eq!(rows.len(), inputs[0].graph.len());
        for r in &rows {
            assert_eq!(r.alpha.len(), r.tokens.len());
            assert!((r.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!((rows.iter().map(|r| r.node_attention).sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_dataset_predicts_nothing() {
        let (_, emb) = toy(16);
        let rsn = ReasonerModel::new(ReasonerConfig { dim: 16, node_dim: 16, ..Default::default() }, EmbedConfig::default(), 0);
        let (p, f) = predict(&[], &DocChoice::Oracle, &rsn, &emb, &HeuristicAnnotator);
        assert_eq!(p, Predictions::default());
        assert!(f.is_empty());
    }
}
