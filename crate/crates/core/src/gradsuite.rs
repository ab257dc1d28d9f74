//! Finite-difference checks over primitives, selector losses and the composed reasoner loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::annotate::MentionSet;
use crate::data::AnswerType;
use crate::diff::gradcheck::{primitive_suite, random_matrix, run_case, CheckOutcome, DEFAULT_TOLERANCE};
use crate::diff::{Graph, ParamStore, Var};
use crate::embed::layout::{CLS, SEP};
use crate::embed::{Segment, SentenceSpan, TokenLayout};
use crate::error::{ModelError, ShapeError};
use crate::graph::{build_graph, EdgeTypes, Node, SentenceGraph};
use crate::reasoner::{AttentionMode, Reasoner, ReasonerConfig, ReasonerLabels};
use crate::selector::{Selector, SelectorConfig, SelectorLoss};

type Forward = Box<dyn Fn(&ParamStore) -> Result<(Graph, Var), ShapeError>>;
type Builder = fn(&mut ChaCha8Rng) -> (ParamStore, Forward);

fn shape_only(e: ModelError) -> ShapeError {
    match e {
        ModelError::Shape(e) => e,
        other => panic!("gradient check fixture is malformed: {other}"),
    }
}

fn selector_case(loss: SelectorLoss, mhsa: bool, rng: &mut ChaCha8Rng) -> (ParamStore, Forward) {
    let n = rng.random_range(3..6);
    let config = SelectorConfig { dim: 4, heads: 2, mhsa, loss, ..SelectorConfig::default() };
    let mut store = ParamStore::new();
    let selector = Selector::new(config, &mut store, rng);
    let x = random_matrix(n, 4, rng);
    let mut scores: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
    scores[0] = 2;
    scores[1] = 0;
    let forward = move |s: &ParamStore| {
        let mut fwd = selector.forward(s, &x).map_err(shape_only)?;
        let loss = selector.loss(&mut fwd, &scores).map_err(shape_only)?;
        Ok((fwd.graph, loss))
    };
    (store, Box::new(forward))
}

/// Question of one token followed by sentences of the given lengths; the first half
/// (rounded up) belongs to document 0 and the rest to document 1.
pub fn fixture_layout(lengths: &[usize]) -> TokenLayout {
    let mut tokens = vec![CLS.to_string(), "q".into(), SEP.into()];
    let mut segments = vec![Segment::Question; 3];
    let mut spans = Vec::new();
    let half = lengths.len().div_ceil(2);
    for (k, &n) in lengths.iter().enumerate() {
        let start = tokens.len();
        for t in 0..n {
            tokens.push(format!("w{k}_{t}"));
            segments.push(Segment::Context);
        }
        let doc = usize::from(k >= half);
        let sentence = if doc == 0 { k } else { k - half };
        spans.push(SentenceSpan { start, end: tokens.len(), doc, sentence });
    }
    tokens.push(SEP.into());
    segments.push(Segment::Context);
    TokenLayout { tokens, segments, sentence_spans: spans, cls_index: 0, offsets: None }
}

fn fixture_graph(layout: &TokenLayout, rng: &mut ChaCha8Rng) -> SentenceGraph {
    let docs: Vec<usize> = layout.sentence_spans.iter().map(|s| s.doc).collect();
    let pool = ["q", "x", "y"];
    let sets: Vec<MentionSet> = docs
        .iter()
        .map(|_| MentionSet::from_strings(pool.iter().copied().filter(|_| rng.random_bool(0.5))))
        .collect();
    let nodes = layout
        .sentence_spans
        .iter()
        .enumerate()
        .map(|(k, s)| Node { span: k, doc: s.doc, title: format!("D{}", s.doc), sentence: s.sentence })
        .collect();
    SentenceGraph {
        nodes,
        neighbors: build_graph(&docs, &MentionSet::from_strings(["q"]), &sets, EdgeTypes::default()),
    }
}

fn reasoner_case(attention: AttentionMode, gnn: bool, rng: &mut ChaCha8Rng) -> (ParamStore, Forward) {
    let lengths: Vec<usize> = (0..rng.random_range(2..5)).map(|_| rng.random_range(1..4)).collect();
    let layout = fixture_layout(&lengths);
    let graph = fixture_graph(&layout, rng);
    let config = ReasonerConfig { dim: 4, node_dim: 3, attention, gnn, ..ReasonerConfig::default() };
    let mut store = ParamStore::new();
    let reasoner = Reasoner::new(config, &mut store, rng);
    let h = random_matrix(layout.len(), 4, rng);
    let first = &layout.sentence_spans[0];
    let answer_type = match rng.random_range(0..3) {
        0 => AnswerType::Yes,
        1 => AnswerType::No,
        _ => AnswerType::Span,
    };
    let labels = ReasonerLabels {
        span: Some((first.start, first.end - 1)),
        support: (0..graph.len()).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect(),
        answer_type,
    };
    let forward = move |s: &ParamStore| {
        let mut fwd = reasoner.forward(s, &h, &layout, &graph).map_err(shape_only)?;
        let (loss, _) = reasoner.loss(&mut fwd, &labels).map_err(shape_only)?;
        Ok((fwd.graph, loss))
    };
    (store, Box::new(forward))
}

/// Every check at the default step and tolerance, `seeds` random instances each.
pub fn full_suite(root_seed: u64, seeds: usize) -> Result<Vec<CheckOutcome>, ShapeError> {
    let mut out = primitive_suite(root_seed, seeds)?;
    let model_cases: Vec<(&str, Builder)> = vec![
        ("selector_pairwise_mhsa", |r| selector_case(SelectorLoss::Pairwise, true, r)),
        ("selector_pairwise_plain", |r| selector_case(SelectorLoss::Pairwise, false, r)),
        ("selector_bce", |r| selector_case(SelectorLoss::Bce, false, r)),
        ("reasoner_mixed", |r| reasoner_case(AttentionMode::Mixed, true, r)),
        ("reasoner_self", |r| reasoner_case(AttentionMode::SelfOnly, true, r)),
        ("reasoner_mean", |r| reasoner_case(AttentionMode::Mean, true, r)),
        ("reasoner_no_gnn", |r| reasoner_case(AttentionMode::Mixed, false, r)),
    ];
    for (name, build) in model_cases {
        out.push(run_case(name, seeds, root_seed, DEFAULT_TOLERANCE, build)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_over_twenty_seeds() {
        let outcomes = full_suite(11, 20).unwrap();
        assert!(outcomes.iter().any(|o| o.name == "reasoner_mixed"));
        for o in &outcomes {
            assert_eq!(o.seeds, 20);
            assert!(o.passed, "{o:?}");
        }
    }
}
