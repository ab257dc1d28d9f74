//! Document selector: multi-head self-attention over per-document summary
//! vectors, bilinear pairwise scoring trained with a pairwise ranking loss,
//! relevance counting for top-k inference, and the per-document BCE baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{glorot, sigmoid, Graph, Linear, Matrix, ParamId, ParamStore, Var};
use crate::error::{ModelError, ShapeError};

/// Clipping applied to plain probabilities before taking logarithms.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorLoss {
    #[default]
    Pairwise,
    Bce,
}

/// Document scores used to derive pair labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreScheme {
    /// 0 distractor, 1 gold, 2 gold holding the answer span.
    #[default]
    #[serde(rename = "012")]
    ZeroOneTwo,
    /// 0 distractor, 1 gold.
    #[serde(rename = "01")]
    ZeroOne,
}

impl ScoreScheme {
    pub fn apply(self, score: u8) -> u8 {
        match self {
            ScoreScheme::ZeroOneTwo => score,
            ScoreScheme::ZeroOne => score.min(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub dim: usize,
    pub heads: usize,
    pub mhsa: bool,
    pub loss: SelectorLoss,
    pub scores: ScoreScheme,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            mhsa: true,
            loss: SelectorLoss::Pairwise,
            scores: ScoreScheme::ZeroOneTwo,
        }
    }
}

/// Label for the ordered pair `(i, j)`: 1 iff document `i` outranks `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    pub label: bool,
}

/// Labels for all ordered pairs `i != j`, row-major.
pub fn pair_labels(scores: &[u8], scheme: ScoreScheme) -> Vec<PairLabel> {
    let s: Vec<u8> = scores.iter().map(|&x| scheme.apply(x)).collect();
    let mut out = Vec::with_capacity(s.len() * s.len().saturating_sub(1));
    for i in 0..s.len() {
        for j in 0..s.len() {
            if i != j {
                out.push(PairLabel {
                    i,
                    j,
                    label: s[i] > s[j],
                });
            }
        }
    }
    out
}

fn clipped_bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over the labelled pairs of a probability matrix.
pub fn pairwise_loss(p: &Matrix, labels: &[PairLabel]) -> Result<f64, ModelError> {
    if p.rows() < 2 || labels.is_empty() {
        return Err(ModelError::TooFewDocuments { n: p.rows() });
    }
    let total: f64 = labels
        .iter()
        .map(|l| clipped_bce(p.get(l.i, l.j), f64::from(u8::from(l.label))))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Sum of per-document binary cross-entropies.
pub fn baseline_bce_loss(probs: &[f64], gold: &[bool]) -> f64 {
    probs
        .iter()
        .zip(gold)
        .map(|(&p, &t)| clipped_bce(p, f64::from(u8::from(t))))
        .sum()
}

/// Thresholded win counts and the selected top-k documents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub counts: Vec<usize>,
    /// Selected document indices in rank order.
    pub selected: Vec<usize>,
}

/// `R_i = #{j != i : P(i,j) > 0.5}`; top-k by `R`, then by larger row sum of
/// `P` over `j != i`, then by lower index.
pub fn relevance_rank(p: &Matrix, k: usize) -> RelevanceVector {
    let n = p.rows();
    let mut counts = vec![0usize; n];
    let mut sums = vec![0.0f64; n];
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let x = p.get(i, j);
            sums[i] += x;
            if x > 0.5 {
                counts[i] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then(sums[b].total_cmp(&sums[a]))
            .then(a.cmp(&b))
    });
    order.truncate(k.min(n));
    RelevanceVector {
        counts,
        selected: order,
    }
}

/// Top-k by per-document probability, ties to the lower index.
pub fn rank_by_probability(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k.min(probs.len()));
    order
}

/// Multi-head scaled dot-product self-attention without positional input.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub output: ParamId,
    pub head_dim: usize,
}

impl Mhsa {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        let head_dim = dim / heads;
        let mut proj = |kind: &str, h: usize, rng: &mut _| {
            store.add(format!("{name}.{kind}.{h}"), glorot(dim, head_dim, rng))
        };
        let query = (0..heads).map(|h| proj("query", h, rng)).collect();
        let key = (0..heads).map(|h| proj("key", h, rng)).collect();
        let value = (0..heads).map(|h| proj("value", h, rng)).collect();
        let output = store.add(format!("{name}.output"), glorot(dim, dim, rng));
        Self {
            query,
            key,
            value,
            output,
            head_dim,
        }
    }

    /// Returns the `n×d` output and each head's `n×n` attention matrix.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Vec<Var>), ShapeError> {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.query.len());
        let mut weights = Vec::with_capacity(self.query.len());
        for h in 0..self.query.len() {
            let wq = g.param(store, self.query[h]);
            let wk = g.param(store, self.key[h]);
            let wv = g.param(store, self.value[h]);
            let q = g.matmul(x, wq)?;
            let k = g.matmul(x, wk)?;
            let v = g.matmul(x, wv)?;
            let kt = g.transpose(k);
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            heads.push(g.matmul(attn, v)?);
            weights.push(attn);
        }
        let cat = g.concat_cols(&heads)?;
        let wo = g.param(store, self.output);
        Ok((g.matmul(cat, wo)?, weights))
    }
}

/// `P = σ(M W Mᵀ + M u 1ᵀ + 1 (M w)ᵀ + b)`.
#[derive(Clone, Debug)]
pub struct Bilinear {
    pub weight: ParamId,
    pub left: ParamId,
    pub right: ParamId,
    pub bias: ParamId,
}

impl Bilinear {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), glorot(dim, dim, rng)),
            left: store.add(format!("{name}.left"), glorot(dim, 1, rng)),
            right: store.add(format!("{name}.right"), glorot(dim, 1, rng)),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, 1)),
        }
    }

    /// `n×n` matrix of pair logits.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, m: Var) -> Result<Var, ShapeError> {
        let w = g.param(store, self.weight);
        let u = g.param(store, self.left);
        let v = g.param(store, self.right);
        let b = g.param(store, self.bias);
        let mw = g.matmul(m, w)?;
        let mt = g.transpose(m);
        let quad = g.matmul(mw, mt)?;
        let mu = g.matmul(m, u)?;
        let with_left = g.add_broadcast(quad, mu)?;
        let mv = g.matmul(m, v)?;
        let mv_row = g.transpose(mv);
        let with_right = g.add_broadcast(with_left, mv_row)?;
        g.add_broadcast(with_right, b)
    }
}

/// Forward products of the selector for one example.
pub struct SelectorForward {
    pub graph: Graph,
    /// `n×n` pair logits (pairwise) or `n×1` document logits (baseline).
    pub logits: Var,
    /// Per-head attention matrices, empty without MHSA.
    pub attention: Vec<Var>,
}

/// Selector inference result for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Pairwise probabilities `n×n` or per-document probabilities `n×1`.
    pub probs: Matrix,
    pub counts: Vec<usize>,
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Selector {
    pub config: SelectorConfig,
    pub mhsa: Option<Mhsa>,
    pub scorer: Option<Bilinear>,
    pub classifier: Option<Linear>,
}

impl Selector {
    pub fn new(config: SelectorConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let d = config.dim;
        let mhsa = config
            .mhsa
            .then(|| Mhsa::new(store, "selector.mhsa", d, config.heads, rng));
        let (scorer, classifier) = match config.loss {
            SelectorLoss::Pairwise => (Some(Bilinear::new(store, "selector.pair", d, rng)), None),
            SelectorLoss::Bce => (
                None,
                Some(Linear::new(store, "selector.doc", d, 1, true, rng)),
            ),
        };
        Self {
            config,
            mhsa,
            scorer,
            classifier,
        }
    }

    /// Records the forward pass over an `n×d` matrix of summary vectors.
    pub fn forward(&self, store: &ParamStore, summaries: &Matrix) -> Result<SelectorForward, ModelError> {
        if summaries.rows() == 0 {
            return Err(ModelError::Empty("selector input has no documents".into()));
        }
        let mut g = Graph::new();
        let x = g.constant(summaries.clone());
        let (m, attention) = match &self.mhsa {
            Some(mhsa) => mhsa.forward(&mut g, store, x)?,
            None => (x, Vec::new()),
        };
        let logits = match (&self.scorer, &self.classifier) {
            (Some(s), _) => s.logits(&mut g, store, m)?,
            (None, Some(c)) => c.forward(&mut g, store, m)?,
            (None, None) => unreachable!("selector has a scoring head"),
        };
        Ok(SelectorForward {
            graph: g,
            logits,
            attention,
        })
    }

    /// Training loss for one example given raw document scores.
    pub fn loss(&self, fwd: &mut SelectorForward, scores: &[u8]) -> Result<Var, ModelError> {
        let n = scores.len();
        match self.config.loss {
            SelectorLoss::Pairwise => {
                if n < 2 {
                    return Err(ModelError::TooFewDocuments { n });
                }
                let mut targets = vec![0.0; n * n];
                let mut weights = vec![0.0; n * n];
                for l in pair_labels(scores, self.config.scores) {
                    targets[l.i * n + l.j] = f64::from(u8::from(l.label));
                    weights[l.i * n + l.j] = 1.0;
                }
                Ok(fwd.graph.bce_with_logits(fwd.logits, &targets, &weights)?)
            }
            SelectorLoss::Bce => {
                let targets: Vec<f64> = scores.iter().map(|&s| f64::from(u8::from(s > 0))).collect();
                let mean = fwd.graph.bce_with_logits(fwd.logits, &targets, &vec![1.0; n])?;
                Ok(fwd.graph.scale(mean, n as f64))
            }
        }
    }

    pub fn select(&self, store: &ParamStore, summaries: &Matrix, k: usize) -> Result<Selection, ModelError> {
        let fwd = self.forward(store, summaries)?;
        let probs = fwd.graph.value(fwd.logits).map(sigmoid);
        Ok(match self.config.loss {
            SelectorLoss::Pairwise => {
                let rel = relevance_rank(&probs, k);
                Selection {
                    probs,
                    counts: rel.counts,
                    selected: rel.selected,
                }
            }
            SelectorLoss::Bce => {
                let selected = rank_by_probability(probs.data(), k);
                Selection {
                    counts: probs.data().iter().map(|&p| usize::from(p > 0.5)).collect(),
                    probs,
                    selected,
                }
            }
        })
    }

    /// Attention matrices of every head, averaged, as plain values.
    pub fn attention(&self, store: &ParamStore, summaries: &Matrix) -> Result<Vec<Matrix>, ModelError> {
        let fwd = self.forward(store, summaries)?;
        Ok(fwd.attention.iter().map(|&a| fwd.graph.value(a).clone()).collect())
    }
}

/// Plain-value form of the pair probability, for checking the graph version.
pub fn score_pair(w: &Matrix, u: &[f64], v: &[f64], b: f64, x: &[f64], y: &[f64]) -> f64 {
    let mut quad = 0.0;
    for (a, &xa) in x.iter().enumerate() {
        for (c, &yc) in y.iter().enumerate() {
            quad += xa * w.get(a, c) * yc;
        }
    }
    let lin: f64 = x.iter().zip(y).zip(u.iter().zip(v)).map(|((xa, ya), (ua, va))| ua * xa + va * ya).sum();
    sigmoid(quad + lin + b)
}
