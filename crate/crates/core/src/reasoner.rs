//! Joint answer and explanation model over the reasoner context.
//!
//! A span head scores start and end positions per token. Each sentence is
//! pooled into one vector by attention mixing a learned token score with the
//! span logits. Sentence vectors are refined by a gated multi-relational graph
//! convolution over the sentence graph, then classified as supporting or not.
//! An attention over nodes weighted by support probability feeds the
//! three-way answer-type classifier.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnswerType, Example, SupportingFact};
use crate::diff::{sigmoid, Activation, Graph, Linear, Matrix, Mlp, ParamStore, Var};
use crate::embed::{decode_span, TokenLayout};
use crate::error::{ModelError, ShapeError};
use crate::graph::{EdgeTypes, SentenceGraph, NUM_RELATIONS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Learned token score plus start and end logits.
    #[default]
    Mixed,
    /// Learned token score only.
    #[serde(rename = "self")]
    SelfOnly,
    /// Uniform weights.
    Mean,
}

impl std::str::FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "self" => Ok(Self::SelfOnly),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown attention mode {other:?}, expected mixed, self or mean")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    /// Token embedding width.
    pub dim: usize,
    /// Graph node width.
    pub node_dim: usize,
    pub hops: usize,
    pub gnn: bool,
    pub edges: EdgeTypes,
    pub attention: AttentionMode,
    /// Stop gradients from the pooling attention into the span head.
    pub detach_span: bool,
    pub activation: Activation,
    pub gamma: f64,
    pub support_threshold: f64,
    pub max_span: usize,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            node_dim: 64,
            hops: 2,
            gnn: true,
            edges: EdgeTypes::default(),
            attention: AttentionMode::Mixed,
            detach_span: false,
            activation: Activation::Tanh,
            gamma: 1.0,
            support_threshold: 0.5,
            max_span: 30,
        }
    }
}

impl ReasonerConfig {
    /// Number of message-passing hops actually applied.
    pub fn effective_hops(&self) -> usize {
        if self.gnn {
            self.hops
        } else {
            0
        }
    }
}

/// Layers of one gated graph-convolution hop.
#[derive(Clone, Debug)]
pub struct GcnHop {
    pub self_loop: Linear,
    pub relations: Vec<Linear>,
    pub gate: Linear,
}

impl GcnHop {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            self_loop: Linear::new(store, &format!("{name}.self"), dim, dim, true, rng),
            relations: (0..NUM_RELATIONS)
                .map(|r| Linear::new(store, &format!("{name}.rel{}", r + 1), dim, dim, true, rng))
                .collect(),
            gate: Linear::new(store, &format!("{name}.gate"), 2 * dim, dim, true, rng),
        }
    }

    /// One update `h' = act(u) ⊙ g + h ⊙ (1 − g)`. Returns `(h', g)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        adjacency: &[Option<Matrix>],
        activation: Activation,
    ) -> Result<(Var, Var), ShapeError> {
        let mut u = self.self_loop.forward(g, store, h)?;
        for (layer, adj) in self.relations.iter().zip(adjacency) {
            if let Some(adj) = adj {
                let msg = layer.forward(g, store, h)?;
                let a = g.constant(adj.clone());
                let agg = g.matmul(a, msg)?;
                u = g.add(u, agg)?;
            }
        }
        let uh = g.concat_cols(&[u, h])?;
        let gate_logits = self.gate.forward(g, store, uh)?;
        let gate = g.sigmoid(gate_logits);
        let act = activation.apply(g, u);
        let new_part = g.mul(act, gate)?;
        let keep = g.one_minus(gate);
        let old_part = g.mul(h, keep)?;
        Ok((g.add(new_part, old_part)?, gate))
    }
}

/// Row-normalized adjacency per relation; `None` when a relation has no edges.
pub fn normalized_adjacency(graph: &SentenceGraph) -> Vec<Option<Matrix>> {
    let n = graph.len();
    graph
        .neighbors
        .iter()
        .map(|adj| {
            if adj.iter().all(Vec::is_empty) {
                return None;
            }
            let mut m = Matrix::zeros(n, n);
            for (j, ns) in adj.iter().enumerate() {
                for &k in ns {
                    m.set(j, k, 1.0 / ns.len() as f64);
                }
            }
            Some(m)
        })
        .collect()
}

/// Training targets for one reasoner input.
#[derive(Clone, Debug, PartialEq)]
pub struct ReasonerLabels {
    /// Inclusive token span; `None` masks the span loss.
    pub span: Option<(usize, usize)>,
    /// 1.0 for supporting nodes, 0.0 otherwise.
    pub support: Vec<f64>,
    pub answer_type: AnswerType,
}

impl ReasonerLabels {
    pub fn new(ex: &Example, graph: &SentenceGraph, span: Option<(usize, usize)>) -> Self {
        let positions = ex.support_positions();
        Self {
            span,
            support: graph
                .nodes
                .iter()
                .map(|n| f64::from(u8::from(positions.contains(&(n.doc, n.sentence)))))
                .collect(),
            answer_type: ex.answer_type,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub span: f64,
    pub support: f64,
    pub answer_type: f64,
    pub gamma: f64,
    pub total: f64,
}

/// Recorded forward pass for one input.
pub struct ReasonerForward {
    pub graph: Graph,
    /// `L×2` start and end logits.
    pub span_logits: Var,
    /// Per sentence, `1×L_j` pooling weights.
    pub alphas: Vec<Var>,
    /// Gate activations per hop, `n×d_g`.
    pub gates: Vec<Var>,
    /// Final node states `n×d_g`.
    pub nodes: Var,
    /// `n×1` support logits.
    pub support_logits: Var,
    /// `1×n` node attention used by the answer-type head.
    pub node_attention: Var,
    /// `1×3` answer-type logits ordered span, yes, no.
    pub type_logits: Var,
}

/// Decoded prediction for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ReasonerPrediction {
    pub answer_type: AnswerType,
    pub span: Option<(usize, usize)>,
    pub answer: String,
    pub support: Vec<SupportingFact>,
    pub support_probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Reasoner {
    pub config: ReasonerConfig,
    pub span_head: Mlp,
    pub token_score: Mlp,
    pub projection: Linear,
    pub hops: Vec<GcnHop>,
    pub support_head: Mlp,
    pub type_head: Mlp,
}

impl Reasoner {
    pub fn new(config: ReasonerConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let (d, dg) = (config.dim, config.node_dim);
        let act = config.activation;
        Self {
            span_head: Mlp::new(store, "reasoner.span", (d, d, 2), act, rng),
            token_score: Mlp::new(store, "reasoner.att", (d, (d / 2).max(1), 1), act, rng),
            projection: Linear::new(store, "reasoner.proj", d, dg, true, rng),
            hops: (0..config.hops)
                .map(|k| GcnHop::new(store, &format!("reasoner.gcn{k}"), dg, rng))
                .collect(),
            support_head: Mlp::new(store, "reasoner.sp", (dg, dg, 1), act, rng),
            type_head: Mlp::new(store, "reasoner.ans", (dg, dg, 3), act, rng),
            config,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        h: &Matrix,
        layout: &TokenLayout,
        sentence_graph: &SentenceGraph,
    ) -> Result<ReasonerForward, ModelError> {
        if sentence_graph.is_empty() {
            return Err(ModelError::Empty("reasoner input has no sentences".into()));
        }
        let mut g = Graph::new();
        let x = g.constant(h.clone());
        let span_logits = self.span_head.forward(&mut g, store, x)?;
        let span_for_pool = if self.config.detach_span {
            g.detach(span_logits)
        } else {
            span_logits
        };
        let ones = g.constant(Matrix::filled(2, 1, 1.0));

        let mut sentences = Vec::with_capacity(sentence_graph.len());
        let mut alphas = Vec::with_capacity(sentence_graph.len());
        for node in &sentence_graph.nodes {
            let span = layout.sentence_spans[node.span];
            let block = g.slice_rows(x, span.start, span.end)?;
            let alpha = match self.config.attention {
                AttentionMode::Mean => g.constant(Matrix::filled(1, span.len(), 1.0 / span.len() as f64)),
                mode => {
                    let mut score = self.token_score.forward(&mut g, store, block)?;
                    if mode == AttentionMode::Mixed {
                        let logits = g.slice_rows(span_for_pool, span.start, span.end)?;
                        let both = g.matmul(logits, ones)?;
                        score = g.add(score, both)?;
                    }
                    let row = g.transpose(score);
                    g.softmax_rows(row)
                }
            };
            sentences.push(g.matmul(alpha, block)?);
            alphas.push(alpha);
        }
        let s = g.concat_rows(&sentences)?;
        let mut state = self.projection.forward(&mut g, store, s)?;

        let adjacency = normalized_adjacency(sentence_graph);
        let mut gates = Vec::new();
        for hop in self.hops.iter().take(self.config.effective_hops()) {
            let (next, gate) = hop.forward(&mut g, store, state, &adjacency, self.config.activation)?;
            state = next;
            gates.push(gate);
        }

        let support_logits = self.support_head.forward(&mut g, store, state)?;
        let support_probs = g.sigmoid(support_logits);
        let weights_row = g.transpose(support_probs);
        let node_attention = g.softmax_rows(weights_row);
        let pooled = g.matmul(node_attention, state)?;
        let type_logits = self.type_head.forward(&mut g, store, pooled)?;

        Ok(ReasonerForward {
            graph: g,
            span_logits,
            alphas,
            gates,
            nodes: state,
            support_logits,
            node_attention,
            type_logits,
        })
    }

    /// Adds the joint loss to the graph and returns it with its components.
    pub fn loss(&self, fwd: &mut ReasonerForward, labels: &ReasonerLabels) -> Result<(Var, LossBreakdown), ModelError> {
        let g = &mut fwd.graph;
        let (l, _) = g.shape(fwd.span_logits);
        let gamma = self.config.gamma;

        let span = match labels.span {
            Some((s, e)) => {
                for p in [s, e] {
                    if p >= l {
                        return Err(ModelError::LabelOutOfRange { label: p, len: l });
                    }
                }
                let start = g.slice_cols(fwd.span_logits, 0, 1)?;
                let end = g.slice_cols(fwd.span_logits, 1, 2)?;
                let ce_s = g.cross_entropy(start, s)?;
                let ce_e = g.cross_entropy(end, e)?;
                let both = g.add(ce_s, ce_e)?;
                Some(g.scale(both, 0.5))
            }
            None => None,
        };
        let ones = vec![1.0; labels.support.len()];
        let support = g.bce_with_logits(fwd.support_logits, &labels.support, &ones)?;
        let answer_type = g.cross_entropy(fwd.type_logits, labels.answer_type.index())?;

        let mut total = g.add(support, answer_type)?;
        if let Some(span) = span {
            let weighted = g.scale(span, gamma);
            total = g.add(total, weighted)?;
        }
        let breakdown = LossBreakdown {
            span: span.map_or(0.0, |v| g.value(v).item()),
            support: g.value(support).item(),
            answer_type: g.value(answer_type).item(),
            gamma,
            total: g.value(total).item(),
        };
        Ok((total, breakdown))
    }

    pub fn predict(
        &self,
        store: &ParamStore,
        ex: &Example,
        h: &Matrix,
        layout: &TokenLayout,
        sentence_graph: &SentenceGraph,
    ) -> Result<ReasonerPrediction, ModelError> {
        let fwd = self.forward(store, h, layout, sentence_graph)?;
        let g = &fwd.graph;
        let logits = g.value(fwd.span_logits);
        let start: Vec<f64> = (0..logits.rows()).map(|r| logits.get(r, 0)).collect();
        let end: Vec<f64> = (0..logits.rows()).map(|r| logits.get(r, 1)).collect();
        let (answer_type, span) = decode_answer(
            g.value(fwd.type_logits).data(),
            &start,
            &end,
            &valid_positions(layout),
            self.config.max_span,
        );
        let answer = match (answer_type, span) {
            (AnswerType::Yes, _) => "yes".to_string(),
            (AnswerType::No, _) => "no".to_string(),
            (AnswerType::Span, Some((s, e))) => decode_span(ex, layout, s, e),
            (AnswerType::Span, None) => {
                log::warn!("example {}: no valid answer span", ex.id);
                String::new()
            }
        };
        let support_probs: Vec<f64> = g.value(fwd.support_logits).data().iter().map(|&z| sigmoid(z)).collect();
        let support: BTreeSet<SupportingFact> = sentence_graph
            .nodes
            .iter()
            .zip(&support_probs)
            .filter(|(_, &p)| p > self.config.support_threshold)
            .map(|(n, _)| SupportingFact {
                title: n.title.clone(),
                sentence: n.sentence,
            })
            .collect();
        Ok(ReasonerPrediction {
            answer_type,
            span,
            answer,
            support: support.into_iter().collect(),
            support_probs,
        })
    }
}

/// Positions a span may start or end at: tokens inside a context sentence.
pub fn valid_positions(layout: &TokenLayout) -> Vec<bool> {
    let mut valid = vec![false; layout.len()];
    for s in &layout.sentence_spans {
        valid[s.start..s.end].iter_mut().for_each(|v| *v = true);
    }
    valid
}

/// Highest `start[s] + end[e]` over valid `s <= e < s + max_span`.
///
/// Ties go to the lexicographically smallest `(s, e)`.
pub fn best_span(start: &[f64], end: &[f64], valid: &[bool], max_span: usize) -> Option<(usize, usize)> {
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut best: Option<(f64, usize, usize)> = None;
    for e in 0..start.len().min(end.len()) {
        if valid[e] {
            while window.back().is_some_and(|&b| start[b] < start[e]) {
                window.pop_back();
            }
            window.push_back(e);
        }
        while window.front().is_some_and(|&f| f + max_span <= e) {
            window.pop_front();
        }
        if !valid[e] {
            continue;
        }
        let Some(&s) = window.front() else { continue };
        let score = start[s] + end[e];
        let better = match best {
            None => true,
            Some((b, bs, be)) => score > b || (score == b && (s, e) < (bs, be)),
        };
        if better {
            best = Some((score, s, e));
        }
    }
    best.map(|(_, s, e)| (s, e))
}

/// Answer type by argmax (ties to the lower class), plus the best span when the type is span.
pub fn decode_answer(
    type_logits: &[f64],
    start: &[f64],
    end: &[f64],
    valid: &[bool],
    max_span: usize,
) -> (AnswerType, Option<(usize, usize)>) {
    let mut best = 0;
    for (c, &v) in type_logits.iter().enumerate() {
        if v > type_logits[best] {
            best = c;
        }
    }
    let answer_type = AnswerType::from_index(best).unwrap_or(AnswerType::Span);
    match answer_type {
        AnswerType::Span => (answer_type, best_span(start, end, valid, max_span)),
        other => (other, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::gradcheck::{check_gradients, random_matrix};
    use crate::embed::{Segment, SentenceSpan};
    use crate::graph::{build_graph, Node};
    use crate::annotate::MentionSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `[CLS] q [SEP]` then sentences of the given lengths over `docs`, then `[SEP]`.
    fn layout(lengths: &[usize], docs: &[usize]) -> TokenLayout {
        let mut tokens = vec!["[CLS]".to_string(), "q".into(), "[SEP]".into()];
        let mut segments = vec![Segment::Question; 3];
        let mut spans = Vec::new();
        for (k, (&n, &d)) in lengths.iter().zip(docs).enumerate() {
            let start = tokens.len();
            for t in 0..n {
                tokens.push(format!("w{k}_{t}"));
                segments.push(Segment::Context);
            }
            spans.push(SentenceSpan { start, end: tokens.len(), doc: d, sentence: k });
        }
        tokens.push("[SEP]".into());
        segments.push(Segment::Context);
        TokenLayout { tokens, segments, sentence_spans: spans, cls_index: 0, offsets: None }
    }

    fn sentence_graph(layout: &TokenLayout, mentions: &[&[&str]]) -> SentenceGraph {
        let docs: Vec<usize> = layout.sentence_spans.iter().map(|s| s.doc).collect();
        let sets: Vec<MentionSet> = mentions.iter().map(|m| MentionSet::from_strings(*m)).collect();
        let question = MentionSet::from_strings(["q"]);
        SentenceGraph {
            nodes: layout
                .sentence_spans
                .iter()
                .enumerate()
                .map(|(k, s)| Node { span: k, doc: s.doc, title: format!("D{}", s.doc), sentence: s.sentence })
                .collect(),
            neighbors: build_graph(&docs, &question, &sets, EdgeTypes::default()),
        }
    }

    fn small(config: ReasonerConfig, seed: u64) -> (Reasoner, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (Reasoner::new(config, &mut store, &mut rng), store)
    }

    fn tiny_config() -> ReasonerConfig {
        ReasonerConfig { dim: 4, node_dim: 3, ..ReasonerConfig::default() }
    }

    fn brute_best(start: &[f64], end: &[f64], valid: &[bool], max_span: usize) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for s in 0..start.len() {
            for e in s..end.len() {
                if !valid[s] || !valid[e] || e - s >= max_span {
                    continue;
                }
                let v = start[s] + end[e];
                if best.is_none_or(|(b, _, _)| v > b) {
                    best = Some((v, s, e));
                }
            }
        }
        best.map(|(_, s, e)| (s, e))
    }

    #[test]
    fn decode_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..1000 {
            let l = rng.random_range(1..80);
            let coarse = trial % 3 == 0;
            let draw = |rng: &mut ChaCha8Rng| if coarse { f64::from(rng.random_range(0..3u8)) } else { rng.random::<f64>() * 4.0 - 2.0 };
            let start: Vec<f64> = (0..l).map(|_| draw(&mut rng)).collect();
            let end: Vec<f64> = (0..l).map(|_| draw(&mut rng)).collect();
            let valid: Vec<bool> = (0..l).map(|_| rng.random_bool(0.8)).collect();
            let max_span = rng.random_range(1..35);
            assert_eq!(
                best_span(&start, &end, &valid, max_span),
                brute_best(&start, &end, &valid, max_span),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn decode_examples() {
        let valid = vec![true; 10];
        let mut start = vec![0.0; 10];
        let mut end = vec![0.0; 10];
        start[5] = 3.0;
        end[7] = 3.0;
        assert_eq!(decode_answer(&[1.0, 0.0, 0.0], &start, &end, &valid, 30), (AnswerType::Span, Some((5, 7))));
        assert_eq!(decode_answer(&[0.0, 2.0, 1.0], &start, &end, &valid, 30), (AnswerType::Yes, None));
        // best end precedes best start
        let mut start = vec![0.0; 10];
        let mut end = vec![0.0; 10];
        start[6] = 5.0;
        end[2] = 5.0;
        end[8] = 1.0;
        assert_eq!(best_span(&start, &end, &valid, 30), Some((6, 8)));
        assert_eq!(best_span(&start, &end, &[false; 10], 30), None);
    }

    #[test]
    fn attention_and_gates_are_well_formed() {
        let lay = layout(&[3, 1, 4, 2], &[0, 0, 1, 1]);
        let graph = sentence_graph(&lay, &[&["q", "a"], &[], &["a"], &["q"]]);
        let (model, store) = small(ReasonerConfig { dim: 6, node_dim: 5, ..Default::default() }, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_matrix(lay.len(), 6, &mut rng);
        let fwd = model.forward(&store, &h, &lay, &graph).unwrap();
        for (k, &a) in fwd.alphas.iter().enumerate() {
            let a = fwd.graph.value(a);
            assert_eq!(a.cols(), lay.sentence_spans[k].len());
            assert!((a.sum() - 1.0).abs() < 1e-6);
            assert!(a.data().iter().all(|&w| w >= 0.0));
        }
        // singleton sentence
        assert!((fwd.graph.value(fwd.alphas[1]).item() - 1.0).abs() < 1e-12);
        assert!((fwd.graph.value(fwd.node_attention).sum() - 1.0).abs() < 1e-6);
        assert_eq!(fwd.gates.len(), 2);
        for &gate in &fwd.gates {
            assert!(fwd.graph.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert_eq!(fwd.graph.value(fwd.type_logits).shape(), (1, 3));
        assert_eq!(fwd.graph.value(fwd.support_logits).shape(), (4, 1));
    }

    #[test]
    fn mean_mode_averages_tokens() {
        let lay = layout(&[3, 2], &[0, 1]);
        let graph = sentence_graph(&lay, &[&[], &[]]);
        let (model, store) = small(ReasonerConfig { dim: 4, node_dim: 4, attention: AttentionMode::Mean, ..Default::default() }, 3);
        let h = random_matrix(lay.len(), 4, &mut ChaCha8Rng::seed_from_u64(4));
        let fwd = model.forward(&store, &h, &lay, &graph).unwrap();
        let a = fwd.graph.value(fwd.alphas[0]);
        assert!(a.data().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn gcn_hop_by_hand() {
        // two nodes, one type-1 edge, 2-dim features
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hop = GcnHop::new(&mut store, "hop", 2, &mut rng);
        let ws = Matrix::from_rows(&[vec![0.5, -0.2], vec![0.1, 0.3]]);
        let w1 = Matrix::from_rows(&[vec![0.4, 0.0], vec![-0.3, 0.2]]);
        let wg = Matrix::from_rows(&[vec![0.2, 0.1], vec![-0.1, 0.3], vec![0.05, 0.0], vec![0.0, -0.2]]);
        *store.value_mut(hop.self_loop.weight) = ws.clone();
        *store.value_mut(hop.self_loop.bias.unwrap()) = Matrix::row_vector(&[0.1, 0.0]);
        *store.value_mut(hop.relations[0].weight) = w1.clone();
        *store.value_mut(hop.relations[0].bias.unwrap()) = Matrix::row_vector(&[0.0, 0.05]);
        *store.value_mut(hop.gate.weight) = wg.clone();
        *store.value_mut(hop.gate.bias.unwrap()) = Matrix::row_vector(&[0.0, 0.1]);

        let h0 = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]);
        let graph = SentenceGraph {
            nodes: (0..2).map(|k| Node { span: k, doc: 0, title: "D".into(), sentence: k }).collect(),
            neighbors: [vec![vec![1], vec![0]], vec![vec![], vec![]], vec![vec![], vec![]]],
        };
        let mut g = Graph::new();
        let hv = g.constant(h0.clone());
        let (out, _) = hop
            .forward(&mut g, &store, hv, &normalized_adjacency(&graph), Activation::Tanh)
            .unwrap();

        let lin = |x: &[f64], w: &Matrix, b: &[f64]| -> Vec<f64> {
            (0..w.cols()).map(|c| b[c] + (0..x.len()).map(|r| x[r] * w.get(r, c)).sum::<f64>()).collect()
        };
        for j in 0..2 {
            let other = 1 - j;
            let mut u = lin(h0.row(j), &ws, &[0.1, 0.0]);
            let m = lin(h0.row(other), &w1, &[0.0, 0.05]);
            u.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
            let cat = [u[0], u[1], h0.get(j, 0), h0.get(j, 1)];
            let gate: Vec<f64> = lin(&cat, &wg, &[0.0, 0.1]).into_iter().map(sigmoid).collect();
            for c in 0..2 {
                let expected = u[c].tanh() * gate[c] + h0.get(j, c) * (1.0 - gate[c]);
                assert!((g.value(out).get(j, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_node_uses_self_term_only() {
        let mut store = ParamStore::new();
        let hop = GcnHop::new(&mut store, "hop", 3, &mut ChaCha8Rng::seed_from_u64(5));
        let h0 = random_matrix(2, 3, &mut ChaCha8Rng::seed_from_u64(6));
        let isolated = SentenceGraph {
            nodes: (0..2).map(|k| Node { span: k, doc: k, title: format!("D{k}"), sentence: 0 }).collect(),
            neighbors: std::array::from_fn(|_| vec![vec![], vec![]]),
        };
        let mut g = Graph::new();
        let hv = g.constant(h0.clone());
        let (a, _) = hop.forward(&mut g, &store, hv, &normalized_adjacency(&isolated), Activation::Tanh).unwrap();
        // same node alone in a one-node graph gives the same state
        let mut g2 = Graph::new();
        let h_single = g2.constant(h0.slice_rows(0, 1));
        let single = SentenceGraph {
            nodes: isolated.nodes[..1].to_vec(),
            neighbors: std::array::from_fn(|_| vec![vec![]]),
        };
        let (b, _) = hop.forward(&mut g2, &store, h_single, &normalized_adjacency(&single), Activation::Tanh).unwrap();
        assert!(g.value(a).slice_rows(0, 1).max_abs_diff(g2.value(b)) < 1e-15);
    }

    #[test]
    fn saturated_gate_replaces_state() {
        let mut store = ParamStore::new();
        let hop = GcnHop::new(&mut store, "hop", 2, &mut ChaCha8Rng::seed_from_u64(7));
        store.value_mut(hop.gate.weight).fill(0.0);
        store.value_mut(hop.gate.bias.unwrap()).fill(50.0);
        let h0 = random_matrix(1, 2, &mut ChaCha8Rng::seed_from_u64(8));
        let graph = SentenceGraph {
            nodes: vec![Node { span: 0, doc: 0, title: "D".into(), sentence: 0 }],
            neighbors: std::array::from_fn(|_| vec![vec![]]),
        };
        let mut g = Graph::new();
        let hv = g.constant(h0.clone());
        let (out, _) = hop.forward(&mut g, &store, hv, &normalized_adjacency(&graph), Activation::Tanh).unwrap();
        let u = h0.matmul(store.value(hop.self_loop.weight));
        for c in 0..2 {
            let expected = (u.get(0, c) + store.value(hop.self_loop.bias.unwrap()).get(0, c)).tanh();
            assert!((g.value(out).get(0, c) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_joint_loss_fixture() {
        // L = 10 tokens, 4 nodes, 3 classes, all heads zeroed
        let lay = layout(&[2, 2, 1, 1], &[0, 0, 1, 1]);
        assert_eq!(lay.len(), 10);
        let graph = sentence_graph(&lay, &[&[], &[], &[], &[]]);
        let (model, mut store) = small(ReasonerConfig { dim: 4, node_dim: 4, ..Default::default() }, 9);
        for id in model.span_head.params().into_iter()
            .chain(model.support_head.params())
            .chain(model.type_head.params())
        {
            store.value_mut(id).fill(0.0);
        }
        let h = random_matrix(lay.len(), 4, &mut ChaCha8Rng::seed_from_u64(10));
        let mut fwd = model.forward(&store, &h, &lay, &graph).unwrap();
        let labels = ReasonerLabels { span: Some((3, 4)), support: vec![1.0, 0.0, 1.0, 0.0], answer_type: AnswerType::Span };
        let (_, parts) = model.loss(&mut fwd, &labels).unwrap();
        assert!((parts.span - 10f64.ln()).abs() < 1e-12);
        assert!((parts.support - 2f64.ln()).abs() < 1e-12);
        assert!((parts.answer_type - 3f64.ln()).abs() < 1e-12);
        assert!((parts.total - 4.0943).abs() < 1e-4, "{}", parts.total);
        assert!((parts.total - (parts.gamma * parts.span + parts.support + parts.answer_type)).abs() < 1e-12);
    }

    #[test]
    fn yes_no_examples_mask_span_loss() {
        let lay = layout(&[2, 3], &[0, 1]);
        let graph = sentence_graph(&lay, &[&[], &[]]);
        let (model, store) = small(tiny_config(), 11);
        let h = random_matrix(lay.len(), 4, &mut ChaCha8Rng::seed_from_u64(12));
        let mut fwd = model.forward(&store, &h, &lay, &graph).unwrap();
        let labels = ReasonerLabels { span: None, support: vec![1.0, 1.0], answer_type: AnswerType::No };
        let (_, parts) = model.loss(&mut fwd, &labels).unwrap();
        assert_eq!(parts.span, 0.0);
        let bad = ReasonerLabels { span: Some((0, 99)), ..labels };
        assert!(matches!(model.loss(&mut fwd, &bad), Err(ModelError::LabelOutOfRange { label: 99, .. })));
    }

    fn span_param_grad_norm(config: ReasonerConfig) -> f64 {
        let lay = layout(&[3, 2], &[0, 1]);
        let graph = sentence_graph(&lay, &[&["q"], &["q"]]);
        let (model, mut store) = small(config, 13);
        let h = random_matrix(lay.len(), 4, &mut ChaCha8Rng::seed_from_u64(14));
        let mut fwd = model.forward(&store, &h, &lay, &graph).unwrap();
        let labels = ReasonerLabels { span: Some((3, 5)), support: vec![1.0, 0.0], answer_type: AnswerType::Span };
        let (loss, _) = model.loss(&mut fwd, &labels).unwrap();
        fwd.graph.backward(loss).accumulate_into(&fwd.graph, &mut store, 1.0);
        model.span_head.params().iter().map(|&id| store.get(id).grad.norm()).sum()
    }

    #[test]
    fn zero_gamma_cuts_span_gradient_without_attention_coupling() {
        let base = ReasonerConfig { gamma: 0.0, ..tiny_config() };
        assert_eq!(span_param_grad_norm(ReasonerConfig { attention: AttentionMode::SelfOnly, ..base }), 0.0);
        assert_eq!(span_param_grad_norm(ReasonerConfig { detach_span: true, ..base }), 0.0);
        assert!(span_param_grad_norm(base) > 0.0);
    }

    #[test]
    fn composed_loss_gradients_match_finite_differences() {
        let lay = layout(&[3, 1, 2], &[0, 0, 1]);
        let graph = sentence_graph(&lay, &[&["q", "x"], &[], &["x"]]);
        for seed in 0..20 {
            for attention in [AttentionMode::Mixed, AttentionMode::SelfOnly] {
                let (model, mut store) = small(ReasonerConfig { attention, ..tiny_config() }, seed);
                let h = random_matrix(lay.len(), 4, &mut ChaCha8Rng::seed_from_u64(100 + seed));
                let labels = ReasonerLabels { span: Some((4, 5)), support: vec![1.0, 0.0, 1.0], answer_type: AnswerType::Span };
                let forward = |s: &ParamStore| {
                    let mut fwd = model.forward(s, &h, &lay, &graph).map_err(|e| match e {
                        ModelError::Shape(e) => e,
                        other => panic!("{other}"),
                    })?;
                    let (loss, _) = model.loss(&mut fwd, &labels).map_err(|e| match e {
                        ModelError::Shape(e) => e,
                        other => panic!("{other}"),
                    })?;
                    Ok((fwd.graph, loss))
                };
                let (err, name) = check_gradients(&mut store, forward, 1e-5).unwrap();
                assert!(err <= 1e-4, "seed {seed} {attention:?}: {name} rel err {err}");
            }
        }
    }

    #[test]
    fn without_gnn_support_reads_projection() {
        let lay = layout(&[2, 2], &[0, 1]);
        let graph = sentence_graph(&lay, &[&["q"], &["q"]]);
        let (model, store) = small(ReasonerConfig { gnn: false, ..tiny_config() }, 15);
        let h = random_matrix(lay.len(), 4, &mut ChaCha8Rng::seed_from_u64(16));
        let fwd = model.forward(&store, &h, &lay, &graph).unwrap();
        assert!(fwd.gates.is_empty());
        let (model0, store0) = small(ReasonerConfig { hops: 0, ..tiny_config() }, 15);
        let fwd0 = model0.forward(&store0, &h, &lay, &graph).unwrap();
        assert_eq!(fwd0.graph.value(fwd0.nodes).shape(), fwd.graph.value(fwd.nodes).shape());
    }
}
