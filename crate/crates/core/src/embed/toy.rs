//! Deterministic stand-in for a pretrained contextual encoder.
//!
//! Each token starts from a hashed identity vector plus a sinusoidal position
//! code and a segment offset. Two alignment flags are added to context tokens:
//! whether the token also occurs in the question, and whether it recurs in
//! another context sentence. One fixed, seeded mixing layer then folds in the
//! immediate neighbours, the owning sentence and the question, so every row
//! carries some context. The `[CLS]` row pools the question-matched context
//! tokens and serves as the document summary vector.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layout::{layout_tokens, Segment, TokenLayout, TokenMatrix, CLS, SEP};
use super::EmbeddingSource;
use crate::data::Example;
use crate::error::EmbedError;
use crate::rng::stream;
use crate::text::{is_stopword, normalize_token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub dim: usize,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            seed: 0,
            max_len: 512,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    config: ToyConfig,
    question_segment: Vec<f64>,
    context_segment: Vec<f64>,
    match_flag: Vec<f64>,
    repeat_flag: Vec<f64>,
    /// `3d × d`, applied to `[neighbours; sentence; question]`.
    mixing: Vec<f64>,
}

fn gaussian(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn axpy(acc: &mut [f64], k: f64, x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += k * b;
    }
}

impl ToyEmbedder {
    pub fn new(config: ToyConfig) -> Self {
        let d = config.dim;
        let unit = 1.0 / (d as f64).sqrt();
        let mut rng = stream(config.seed, "toy-embedder/fixed");
        Self {
            question_segment: gaussian(&mut rng, d, 0.5 * unit),
            context_segment: gaussian(&mut rng, d, 0.5 * unit),
            match_flag: gaussian(&mut rng, d, unit),
            repeat_flag: gaussian(&mut rng, d, unit),
            mixing: gaussian(&mut rng, 3 * d * d, 2.0 / ((3 * d) as f64).sqrt()),
            config,
        }
    }

    pub fn config(&self) -> ToyConfig {
        self.config
    }

    /// Unit-scale pseudo-random vector keyed by the lowercased token.
    pub fn identity(&self, token: &str) -> Vec<f64> {
        let key = format!("token/{}", token.to_lowercase());
        let mut rng = stream(self.config.seed, &key);
        gaussian(&mut rng, self.config.dim, 1.0 / (self.config.dim as f64).sqrt())
    }

    fn position(&self, t: usize) -> Vec<f64> {
        let d = self.config.dim;
        let scale = 0.5 * (2.0 / d as f64).sqrt();
        (0..d)
            .map(|i| {
                let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                let angle = t as f64 * freq;
                scale * if i % 2 == 0 { angle.sin() } else { angle.cos() }
            })
            .collect()
    }

    fn mix(&self, neighbours: &[f64], sentence: &[f64], question: &[f64]) -> Vec<f64> {
        let d = self.config.dim;
        let mut out = vec![0.0; d];
        for (block, input) in [neighbours, sentence, question].into_iter().enumerate() {
            for (k, &x) in input.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &self.mixing[(block * d + k) * d..(block * d + k + 1) * d];
                axpy(&mut out, x, row);
            }
        }
        out.iter_mut().for_each(|v| *v = v.tanh());
        out
    }

    /// Embeds an already laid-out sequence.
    pub fn embed_layout(&self, layout: TokenLayout) -> TokenMatrix {
        let d = self.config.dim;
        let l = layout.len();
        let normalized: Vec<String> = layout.tokens.iter().map(|t| normalize_token(t)).collect();
        let is_content = |p: usize| {
            !normalized[p].is_empty()
                && !is_stopword(&normalized[p])
                && layout.tokens[p] != CLS
                && layout.tokens[p] != SEP
        };
        let q_range = layout.question_range();
        let question_words: HashSet<&str> = q_range
            .clone()
            .filter(|&p| is_content(p))
            .map(|p| normalized[p].as_str())
            .collect();

        // sentences each content word occurs in
        let mut occurrences: HashMap<&str, HashSet<usize>> = HashMap::new();
        let sentence_of: Vec<Option<usize>> = (0..l).map(|p| layout.sentence_of(p)).collect();
        for p in 0..l {
            if let Some(k) = sentence_of[p] {
                if is_content(p) {
                    occurrences.entry(normalized[p].as_str()).or_default().insert(k);
                }
            }
        }

        let mut matched_words = HashSet::new();
        let mut matched_positions = Vec::new();
        let mut base: Vec<Vec<f64>> = Vec::with_capacity(l);
        for p in 0..l {
            let mut x = self.identity(&layout.tokens[p]);
            axpy(&mut x, 1.0, &self.position(p));
            let seg = match layout.segments[p] {
                Segment::Question => &self.question_segment,
                Segment::Context => &self.context_segment,
            };
            axpy(&mut x, 1.0, seg);
            if sentence_of[p].is_some() && is_content(p) {
                let word = normalized[p].as_str();
                if question_words.contains(word) {
                    axpy(&mut x, 1.0, &self.match_flag);
                    matched_words.insert(word);
                    matched_positions.push(p);
                }
                if occurrences.get(word).is_some_and(|s| s.len() > 1) {
                    axpy(&mut x, 1.0, &self.repeat_flag);
                }
            }
            base.push(x);
        }

        let mean_of = |positions: &mut dyn Iterator<Item = usize>| {
            let mut acc = vec![0.0; d];
            let mut n = 0usize;
            for p in positions {
                axpy(&mut acc, 1.0, &base[p]);
                n += 1;
            }
            if n > 0 {
                acc.iter_mut().for_each(|v| *v /= n as f64);
            }
            acc
        };
        let question_mean = mean_of(&mut q_range.clone());
        let sentence_means: Vec<Vec<f64>> = layout
            .sentence_spans
            .iter()
            .map(|s| mean_of(&mut (s.start..s.end)))
            .collect();

        let mut values = Vec::with_capacity(l * d);
        for p in 0..l {
            let mixed = if p == layout.cls_index {
                let pooled = mean_of(&mut matched_positions.iter().copied());
                let mut m = self.mix(&pooled, &pooled, &question_mean);
                let coverage = if question_words.is_empty() {
                    0.0
                } else {
                    matched_words.len() as f64 / question_words.len() as f64
                };
                axpy(&mut m, coverage, &self.match_flag);
                m
            } else {
                let neighbours = mean_of(&mut [p.wrapping_sub(1), p + 1].into_iter().filter(|&q| q < l));
                let sentence = match sentence_of[p] {
                    Some(k) => sentence_means[k].clone(),
                    None if q_range.contains(&p) => question_mean.clone(),
                    None => base[p].clone(),
                };
                self.mix(&neighbours, &sentence, &question_mean)
            };
            values.extend(base[p].iter().zip(&mixed).map(|(b, m)| (b + m) as f32));
        }
        TokenMatrix {
            layout,
            dim: d,
            values,
        }
    }
}

impl EmbeddingSource for ToyEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn selector_input(&self, ex: &Example, doc: usize) -> Result<TokenMatrix, EmbedError> {
        Ok(self.embed_layout(layout_tokens(&ex.question, ex, &[doc], self.config.max_len)))
    }

    fn reasoner_input(&self, ex: &Example, docs: &[usize]) -> Result<TokenMatrix, EmbedError> {
        Ok(self.embed_layout(layout_tokens(&ex.question, ex, docs, self.config.max_len)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fixtures::KISS_AND_TELL, parse_dataset};

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_output() {
        let ex = parse_dataset(KISS_AND_TELL.as_bytes()).unwrap().remove(0);
        let a = ToyEmbedder::new(ToyConfig::default()).reasoner_input(&ex, &[1, 2]).unwrap();
        let b = ToyEmbedder::new(ToyConfig::default()).reasoner_input(&ex, &[1, 2]).unwrap();
        assert_eq!(a, b);
        for t in 0..a.rows() {
            assert!((cosine(a.row(t), b.row(t)) - 1.0).abs() < 1e-12);
        }
        let other = ToyEmbedder::new(ToyConfig { seed: 1, ..ToyConfig::default() })
            .reasoner_input(&ex, &[1, 2])
            .unwrap();
        assert_ne!(a.values, other.values);
    }

    #[test]
    fn output_shape_and_layout() {
        let ex = parse_dataset(KISS_AND_TELL.as_bytes()).unwrap().remove(0);
        let m = ToyEmbedder::new(ToyConfig::default()).reasoner_input(&ex, &[1, 2]).unwrap();
        assert_eq!(m.values.len(), m.rows() * 64);
        assert_eq!(m.layout.sentence_spans.len(), 5);
        assert!(m.values.iter().all(|v| v.is_finite()));
        m.layout.validate().unwrap();
    }

    #[test]
    fn summary_separates_related_documents() {
        let ex = parse_dataset(KISS_AND_TELL.as_bytes()).unwrap().remove(0);
        let emb = ToyEmbedder::new(ToyConfig::default());
        let related = emb.selector_input(&ex, 1).unwrap().summary();
        let again = emb.selector_input(&ex, 1).unwrap().summary();
        assert_eq!(related, again);
        let other = emb.selector_input(&ex, 0).unwrap().summary();
        assert_ne!(related, other);
    }
}
