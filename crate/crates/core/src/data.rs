//! Multi-document QA examples in the public HotpotQA JSON shape, plus
//! gold-document and answer-span label derivation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embed::TokenLayout;
use crate::error::{DataError, LabelError};
use crate::text::content_tokens;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningType {
    Bridge,
    Comparison,
}

impl ReasoningType {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningType::Bridge => "bridge",
            ReasoningType::Comparison => "comparison",
        }
    }
}

/// Answer-type class. The discriminant is the class index used by the type head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerType {
    Span = 0,
    Yes = 1,
    No = 2,
}

impl AnswerType {
    pub const ALL: [AnswerType; 3] = [AnswerType::Span, AnswerType::Yes, AnswerType::No];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn of_answer(text: &str) -> Self {
        match text.trim().to_lowercase().as_str() {
            "yes" => AnswerType::Yes,
            "no" => AnswerType::No,
            _ => AnswerType::Span,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SupportingFact {
    pub title: String,
    pub sentence: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub title: String,
    pub sentences: Vec<String>,
    /// Whether any supporting fact references this document.
    pub gold: bool,
    /// Ranking score: 0 distractor, 1 gold, 2 gold and contains the answer span.
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub question: String,
    pub documents: Vec<Document>,
    pub supporting_facts: Vec<SupportingFact>,
    pub answer_text: String,
    pub answer_type: AnswerType,
    pub reasoning_type: ReasoningType,
    pub difficulty: Option<String>,
    /// Set when label derivation could not place the answer in a gold document.
    pub label_warning: Option<String>,
}

impl Example {
    pub fn document_index(&self, title: &str) -> Option<usize> {
        self.documents.iter().position(|d| d.title == title)
    }

    pub fn gold_indices(&self) -> Vec<usize> {
        self.documents
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.gold.then_some(i))
            .collect()
    }

    /// `(document index, sentence index)` pairs of the supporting facts.
    pub fn support_positions(&self) -> BTreeSet<(usize, usize)> {
        self.supporting_facts
            .iter()
            .filter_map(|f| self.document_index(&f.title).map(|d| (d, f.sentence)))
            .collect()
    }
}

/// Label fields added under the `derived` key of an output fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedLabels {
    pub gold: Vec<bool>,
    pub scores: Vec<u8>,
    pub answer_type: AnswerType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawExample {
    #[serde(rename = "_id")]
    id: String,
    question: String,
    answer: String,
    supporting_facts: Vec<(String, usize)>,
    context: Vec<(String, Vec<String>)>,
    #[serde(rename = "type")]
    reasoning_type: ReasoningType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    derived: Option<DerivedLabels>,
}

fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in input.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(input.len());
        }
        offset += l.len() + 1;
    }
    input.len()
}

/// Parses and validates a dataset; labels are derived for every example.
pub fn parse_dataset(raw: &[u8]) -> Result<Vec<Example>, DataError> {
    let records: Vec<RawExample> = serde_json::from_slice(raw).map_err(|e| DataError::Parse {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    records
        .into_iter()
        .map(|r| from_raw(r).map(derive_gold_labels))
        .collect()
}

fn from_raw(raw: RawExample) -> Result<Example, DataError> {
    let invalid = |message: String| DataError::Validation {
        id: raw.id.clone(),
        message,
    };
    if raw.context.is_empty() {
        return Err(invalid("example has no documents".into()));
    }
    if raw.supporting_facts.is_empty() {
        return Err(invalid("example has no supporting facts".into()));
    }
    let documents: Vec<Document> = raw
        .context
        .iter()
        .map(|(title, sentences)| Document {
            title: title.clone(),
            sentences: sentences.clone(),
            gold: false,
            score: 0,
        })
        .collect();
    let mut facts = Vec::new();
    for (title, sentence) in &raw.supporting_facts {
        let matches: Vec<&Document> = documents.iter().filter(|d| &d.title == title).collect();
        match matches.as_slice() {
            [] => return Err(invalid(format!("supporting fact references unknown title {title:?}"))),
            [doc] if *sentence >= doc.sentences.len() => {
                return Err(invalid(format!(
                    "supporting fact ({title:?}, {sentence}) is out of range: document has {} sentences",
                    doc.sentences.len()
                )))
            }
            [_] => {}
            _ => return Err(invalid(format!("supporting fact title {title:?} matches several documents"))),
        }
        let fact = SupportingFact {
            title: title.clone(),
            sentence: *sentence,
        };
        if !facts.contains(&fact) {
            facts.push(fact);
        }
    }
    Ok(Example {
        answer_type: AnswerType::of_answer(&raw.answer),
        id: raw.id,
        question: raw.question,
        documents,
        supporting_facts: facts,
        answer_text: raw.answer,
        reasoning_type: raw.reasoning_type,
        difficulty: raw.level,
        label_warning: None,
    })
}

fn to_raw(ex: &Example, with_derived: bool) -> RawExample {
    RawExample {
        id: ex.id.clone(),
        question: ex.question.clone(),
        answer: ex.answer_text.clone(),
        supporting_facts: ex
            .supporting_facts
            .iter()
            .map(|f| (f.title.clone(), f.sentence))
            .collect(),
        context: ex
            .documents
            .iter()
            .map(|d| (d.title.clone(), d.sentences.clone()))
            .collect(),
        reasoning_type: ex.reasoning_type,
        level: ex.difficulty.clone(),
        derived: with_derived.then(|| DerivedLabels {
            gold: ex.documents.iter().map(|d| d.gold).collect(),
            scores: ex.documents.iter().map(|d| d.score).collect(),
            answer_type: ex.answer_type,
            warning: ex.label_warning.clone(),
        }),
    }
}

/// Serializes examples back to the HotpotQA shape, optionally with a `derived` label block.
pub fn serialize_dataset(examples: &[Example], with_derived: bool) -> Vec<u8> {
    let raw: Vec<RawExample> = examples.iter().map(|e| to_raw(e, with_derived)).collect();
    serde_json::to_vec_pretty(&raw).expect("dataset serialization cannot fail")
}

/// Start of the first occurrence of `needle` in `haystack`.
fn find_subsequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Marks gold documents and assigns ranking scores.
///
/// The gold document whose text contains the (normalized) answer gets score 2;
/// a document holding the answer inside a supporting sentence wins over one
/// that only mentions it elsewhere, then the lowest index wins.
pub fn derive_gold_labels(mut ex: Example) -> Example {
    let support = ex.support_positions();
    for (i, doc) in ex.documents.iter_mut().enumerate() {
        doc.gold = support.iter().any(|&(d, _)| d == i);
        doc.score = u8::from(doc.gold);
    }
    ex.label_warning = None;
    if ex.answer_type != AnswerType::Span {
        return ex;
    }
    let answer = content_tokens(&ex.answer_text);
    let mut best: Option<(bool, usize)> = None;
    for (i, doc) in ex.documents.iter().enumerate().filter(|(_, d)| d.gold) {
        let mut found = false;
        let mut in_support = false;
        for (s, sentence) in doc.sentences.iter().enumerate() {
            if find_subsequence(&content_tokens(sentence), &answer).is_some() {
                found = true;
                in_support |= support.contains(&(i, s));
            }
        }
        if found && best.is_none_or(|(best_support, _)| in_support && !best_support) {
            best = Some((in_support, i));
        }
    }
    match best {
        Some((_, i)) => ex.documents[i].score = 2,
        None => {
            let msg = format!("answer {:?} not found in any gold document", ex.answer_text);
            log::warn!("example {}: {msg}", ex.id);
            ex.label_warning = Some(msg);
        }
    }
    ex
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerLabel {
    pub answer_type: AnswerType,
    /// Inclusive token positions in the token matrix; `None` for Yes/No.
    pub span: Option<(usize, usize)>,
    pub source_doc: Option<usize>,
}

/// Finds the answer tokens inside the context of `tokens`.
///
/// Occurrences inside a supporting sentence win, then the earliest position.
/// Matching is over normalized tokens and never crosses a sentence boundary.
pub fn locate_answer_span(ex: &Example, tokens: &TokenLayout) -> Result<AnswerLabel, LabelError> {
    if ex.answer_type != AnswerType::Span {
        return Ok(AnswerLabel {
            answer_type: ex.answer_type,
            span: None,
            source_doc: None,
        });
    }
    let answer = content_tokens(&ex.answer_text);
    if answer.is_empty() {
        return Err(LabelError::AnswerNotFound { id: ex.id.clone() });
    }
    let support = ex.support_positions();
    let mut first_any: Option<(usize, usize, usize)> = None;
    for span in &tokens.sentence_spans {
        if !ex.documents.get(span.doc).is_some_and(|d| d.gold) {
            continue;
        }
        // content positions inside this sentence
        let positions: Vec<(usize, String)> = (span.start..span.end)
            .map(|p| (p, crate::text::normalize_token(&tokens.tokens[p])))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        let words: Vec<String> = positions.iter().map(|(_, t)| t.clone()).collect();
        if let Some(k) = find_subsequence(&words, &answer) {
            let hit = (positions[k].0, positions[k + answer.len() - 1].0, span.doc);
            if support.contains(&(span.doc, span.sentence)) {
                return Ok(AnswerLabel {
                    answer_type: AnswerType::Span,
                    span: Some((hit.0, hit.1)),
                    source_doc: Some(hit.2),
                });
            }
            first_any.get_or_insert(hit);
        }
    }
    match first_any {
        Some((s, e, d)) => Ok(AnswerLabel {
            answer_type: AnswerType::Span,
            span: Some((s, e)),
            source_doc: Some(d),
        }),
        None => Err(LabelError::AnswerNotFound { id: ex.id.clone() }),
    }
}
