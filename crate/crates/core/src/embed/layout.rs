use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::diff::Matrix;
use crate::error::EmbedError;
use crate::text::tokenize;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Question,
    Context,
}

/// Half-open token range `[start, end)` of one context sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
    /// Index of the owning document in the example.
    pub doc: usize,
    /// Sentence index inside that document.
    pub sentence: usize,
}

impl SentenceSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, pos: usize) -> bool {
        (self.start..self.end).contains(&pos)
    }
}

/// Token sequence `[CLS] question [SEP] context [SEP]` with alignment metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub tokens: Vec<String>,
    pub segments: Vec<Segment>,
    pub sentence_spans: Vec<SentenceSpan>,
    pub cls_index: usize,
    /// Byte range of each token inside the question or its sentence; `None` for markers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<Option<(usize, usize)>>>,
}

impl TokenLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sentence span containing `pos`, if any.
    pub fn sentence_of(&self, pos: usize) -> Option<usize> {
        let k = self.sentence_spans.partition_point(|s| s.end <= pos);
        self.sentence_spans
            .get(k)
            .filter(|s| s.contains(pos))
            .map(|_| k)
    }

    pub fn question_range(&self) -> std::ops::Range<usize> {
        let start = self.cls_index + 1;
        let end = (start..self.len())
            .find(|&p| self.segments[p] != Segment::Question || self.tokens[p] == SEP)
            .unwrap_or(self.len());
        start..end
    }

    pub fn validate(&self) -> Result<(), String> {
        let l = self.tokens.len();
        if self.segments.len() != l {
            return Err(format!("{} segments for {l} tokens", self.segments.len()));
        }
        if let Some(offsets) = &self.offsets {
            if offsets.len() != l {
                return Err(format!("{} offsets for {l} tokens", offsets.len()));
            }
        }
        if self.cls_index != 0 || l == 0 {
            return Err(format!("cls_index must be 0, found {}", self.cls_index));
        }
        let mut prev_end = 0;
        for span in &self.sentence_spans {
            if span.start >= span.end {
                return Err(format!("empty sentence span {span:?}"));
            }
            if span.start < prev_end || span.end > l {
                return Err(format!("sentence span {span:?} overlaps or exceeds {l} tokens"));
            }
            if self.segments[span.start..span.end].iter().any(|s| *s != Segment::Context) {
                return Err(format!("sentence span {span:?} covers non-context tokens"));
            }
            prev_end = span.end;
        }
        Ok(())
    }
}

/// Lays out `[CLS] question [SEP] docs... [SEP]`, documents in the order given.
///
/// When the sequence would exceed `max_len`, whole trailing sentences are
/// dropped; a sentence is never split. Sentences with no tokens get no span.
pub fn layout_tokens(question: &str, ex: &Example, docs: &[usize], max_len: usize) -> TokenLayout {
    let mut tokens = vec![CLS.to_string()];
    let mut segments = vec![Segment::Question];
    let mut offsets = vec![None];

    let mut q_tokens = tokenize(question);
    let q_budget = max_len.saturating_sub(3);
    if q_tokens.len() > q_budget {
        log::warn!(
            "example {}: question truncated from {} to {q_budget} tokens",
            ex.id,
            q_tokens.len()
        );
        q_tokens.truncate(q_budget);
    }
    for t in q_tokens {
        tokens.push(t.text);
        segments.push(Segment::Question);
        offsets.push(Some((t.start, t.end)));
    }
    tokens.push(SEP.to_string());
    segments.push(Segment::Question);
    offsets.push(None);

    let mut spans = Vec::new();
    let mut dropped = 0usize;
    let mut full = false;
    for &d in docs {
        for (s, sentence) in ex.documents[d].sentences.iter().enumerate() {
            let sent_tokens = tokenize(sentence);
            if sent_tokens.is_empty() {
                continue;
            }
            // +1 for the closing [SEP]
            if full || tokens.len() + sent_tokens.len() + 1 > max_len {
                full = true;
                dropped += 1;
                continue;
            }
            let start = tokens.len();
            for t in sent_tokens {
                tokens.push(t.text);
                segments.push(Segment::Context);
                offsets.push(Some((t.start, t.end)));
            }
            spans.push(SentenceSpan {
                start,
                end: tokens.len(),
                doc: d,
                sentence: s,
            });
        }
    }
    if dropped > 0 {
        log::info!(
            "example {}: dropped {dropped} trailing sentences to fit {max_len} tokens",
            ex.id
        );
    }
    tokens.push(SEP.to_string());
    segments.push(Segment::Context);
    offsets.push(None);

    TokenLayout {
        tokens,
        segments,
        sentence_spans: spans,
        cls_index: 0,
        offsets: Some(offsets),
    }
}

/// Text of the inclusive token range `[start, end]`.
///
/// Uses the original sentence text when both ends lie in one sentence and
/// offsets are known; otherwise joins token strings with spaces.
pub fn decode_span(ex: &Example, layout: &TokenLayout, start: usize, end: usize) -> String {
    if let (Some(offsets), Some(k)) = (&layout.offsets, layout.sentence_of(start)) {
        let span = layout.sentence_spans[k];
        if span.contains(end) {
            if let (Some((a, _)), Some((_, b))) = (offsets[start], offsets[end]) {
                if let Some(text) = ex
                    .documents
                    .get(span.doc)
                    .and_then(|d| d.sentences.get(span.sentence))
                    .and_then(|s| s.get(a..b))
                {
                    return text.to_string();
                }
            }
        }
    }
    layout.tokens[start..=end].join(" ")
}

/// Contextual token embeddings `H` (`L×d`, row-major `f32`) with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    pub layout: TokenLayout,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(layout: TokenLayout, dim: usize, values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.len() != layout.len() * dim {
            return Err(EmbedError::Corrupt(format!(
                "{} values for a {}x{dim} matrix",
                values.len(),
                layout.len()
            )));
        }
        layout.validate().map_err(EmbedError::Corrupt)?;
        Ok(Self {
            layout,
            dim,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.layout.len()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows(),
            self.dim,
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// The `[CLS]` row, used as the per-document summary vector.
    pub fn summary(&self) -> Vec<f64> {
        self.row(self.layout.cls_index)
            .iter()
            .map(|&v| f64::from(v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_dataset;

    fn example(sentences: &[&str]) -> Example {
        let ctx = serde_json::to_string(&sentences).unwrap();
        let json = format!(
            r#"[{{"_id":"x","question":"Who is it?","answer":"it","type":"bridge",
                "supporting_facts":[["D",0]],"context":[["D",{ctx}]]}}]"#
        );
        parse_dataset(json.as_bytes()).unwrap().remove(0)
    }

    #[test]
    fn layout_arithmetic() {
        // 5, 4 and 6 tokens
        let ex = example(&["a b c d e", "f g h i", "j k l m n o"]);
        let layout = layout_tokens("Who is it ?", &ex, &[0], 512);
        assert_eq!(layout.len(), 1 + 4 + 1 + 15 + 1);
        assert_eq!(
            layout
                .sentence_spans
                .iter()
                .map(|s| (s.start, s.end))
                .collect::<Vec<_>>(),
            [(6, 11), (11, 15), (15, 21)]
        );
        layout.validate().unwrap();
        // spans tile the context region
        let ctx: Vec<usize> = (0..layout.len())
            .filter(|&p| layout.segments[p] == Segment::Context && layout.tokens[p] != SEP)
            .collect();
        let covered: Vec<usize> = layout
            .sentence_spans
            .iter()
            .flat_map(|s| s.start..s.end)
            .collect();
        assert_eq!(ctx, covered);
    }

    #[test]
    fn truncation_drops_whole_trailing_sentences() {
        let ex = example(&["a b c d e", "f g h i", "j k l m n o"]);
        // 6 prefix tokens + 5 + 4 = 15, +1 closing SEP = 16; third sentence would need 22
        for max_len in 16..22 {
            let layout = layout_tokens("Who is it ?", &ex, &[0], max_len);
            assert_eq!(layout.sentence_spans.len(), 2, "max_len {max_len}");
            assert!(layout.len() <= max_len);
            layout.validate().unwrap();
        }
        let layout = layout_tokens("Who is it ?", &ex, &[0], 15);
        assert_eq!(layout.sentence_spans.len(), 1);
        let layout = layout_tokens("Who is it ?", &ex, &[0], 22);
        assert_eq!(layout.sentence_spans.len(), 3);
    }

    #[test]
    fn sentence_lookup() {
        let ex = example(&["a b", "c"]);
        let layout = layout_tokens("q", &ex, &[0], 512);
        // [CLS] q [SEP] a b c [SEP]
        assert_eq!(layout.sentence_of(0), None);
        assert_eq!(layout.sentence_of(3), Some(0));
        assert_eq!(layout.sentence_of(4), Some(0));
        assert_eq!(layout.sentence_of(5), Some(1));
        assert_eq!(layout.sentence_of(6), None);
        assert_eq!(layout.question_range(), 1..2);
    }

    #[test]
    fn decode_uses_original_text() {
        let ex = example(&["He served the U.S. well."]);
        let layout = layout_tokens("q", &ex, &[0], 512);
        let s = layout.tokens.iter().position(|t| t == "U").unwrap();
        assert_eq!(decode_span(&ex, &layout, s, s + 3), "U.S.");
    }
}
