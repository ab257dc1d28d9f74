//! Named-entity and noun-phrase mentions used by the sentence-graph edge rules.
//!
//! The built-in heuristic treats maximal runs of capitalized tokens (bridged by
//! the connectors "of", "and", "the") as named entities, and stopword- or
//! punctuation-delimited chunks as noun phrases. A precomputed annotation file
//! can replace it per example.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::data::Example;
use crate::error::DataError;
use crate::text::{is_stopword, normalize_mention, normalize_token, tokenize, Token};

/// Normalized mention strings with the byte ranges where they occur.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MentionSet {
    pub mentions: BTreeMap<String, Vec<(usize, usize)>>,
}

impl MentionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mentions given as strings, without source positions.
    pub fn from_strings<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for item in items {
            let norm = normalize_mention(item.as_ref());
            if !norm.is_empty() {
                set.mentions.entry(norm).or_default();
            }
        }
        set
    }

    fn add(&mut self, text: &str, start: usize, end: usize) {
        let norm = normalize_mention(&text[start..end]);
        if !norm.is_empty() {
            self.mentions.entry(norm).or_default().push((start, end));
        }
    }

    pub fn contains(&self, mention: &str) -> bool {
        self.mentions.contains_key(mention)
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.mentions.keys().map(String::as_str)
    }
}

/// True iff the two normalized mention sets intersect.
pub fn mentions_match(a: &MentionSet, b: &MentionSet) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().any(|m| large.contains(m))
}

fn is_capitalized(t: &Token) -> bool {
    t.text.chars().next().is_some_and(char::is_uppercase)
}

fn is_connector(t: &Token) -> bool {
    matches!(t.text.as_str(), "of" | "and" | "the")
}

fn is_word(t: &Token) -> bool {
    !normalize_token(&t.text).is_empty() && !t.text.starts_with(['\'', '\u{2019}'])
}

fn named_entities(text: &str, tokens: &[Token], out: &mut MentionSet) {
    let mut i = 0;
    while i < tokens.len() {
        if !(is_capitalized(&tokens[i]) && is_word(&tokens[i])) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        loop {
            let mut k = j;
            while k < tokens.len() && is_connector(&tokens[k]) {
                k += 1;
            }
            if k < tokens.len() && is_capitalized(&tokens[k]) && is_word(&tokens[k]) {
                j = k + 1;
            } else {
                break;
            }
        }
        let mut start = i;
        while start < j && is_stopword(&normalize_token(&tokens[start].text)) {
            start += 1;
        }
        if start < j {
            out.add(text, tokens[start].start, tokens[j - 1].end);
        }
        i = j;
    }
}

fn noun_phrases(text: &str, tokens: &[Token], out: &mut MentionSet) {
    let mut chunk: Option<(usize, usize)> = None;
    let mut flush = |chunk: &mut Option<(usize, usize)>| {
        if let Some((s, e)) = chunk.take() {
            out.add(text, s, e);
        }
    };
    for t in tokens {
        let norm = normalize_token(&t.text);
        if norm.is_empty() || is_stopword(&norm) || !is_word(t) {
            flush(&mut chunk);
        } else {
            chunk = Some(chunk.map_or((t.start, t.end), |(s, _)| (s, t.end)));
        }
    }
    flush(&mut chunk);
}

/// Deterministic heuristic annotation of one text.
pub fn annotate(text: &str) -> MentionSet {
    let tokens = tokenize(text);
    let mut out = MentionSet::new();
    named_entities(text, &tokens, &mut out);
    noun_phrases(text, &tokens, &mut out);
    out
}

/// Source of question and sentence mentions for an example.
pub trait Annotator: Send + Sync {
    fn question(&self, ex: &Example) -> MentionSet;
    fn sentence(&self, ex: &Example, doc: usize, sentence: usize) -> MentionSet;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicAnnotator;

impl Annotator for HeuristicAnnotator {
    fn question(&self, ex: &Example) -> MentionSet {
        annotate(&ex.question)
    }

    fn sentence(&self, ex: &Example, doc: usize, sentence: usize) -> MentionSet {
        annotate(&ex.documents[doc].sentences[sentence])
    }
}

/// Precomputed mentions for one example.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct ExampleAnnotations {
    #[serde(default)]
    pub question: Vec<String>,
    /// Document title to per-sentence mention lists.
    #[serde(default)]
    pub context: HashMap<String, Vec<Vec<String>>>,
}

/// Annotation file contents; examples or sentences it does not cover fall
/// back to the heuristic.
#[derive(Clone, Debug, Default)]
pub struct FileAnnotator {
    pub examples: HashMap<String, ExampleAnnotations>,
}

impl FileAnnotator {
    pub fn from_json(bytes: &[u8]) -> Result<Self, DataError> {
        let examples = serde_json::from_slice(bytes).map_err(|e| DataError::Parse {
            offset: e.column(),
            message: format!("annotation file line {}: {e}", e.line()),
        })?;
        Ok(Self { examples })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_json(&std::fs::read(path)?)
    }
}

impl Annotator for FileAnnotator {
    fn question(&self, ex: &Example) -> MentionSet {
        match self.examples.get(&ex.id) {
            Some(a) => MentionSet::from_strings(&a.question),
            None => annotate(&ex.question),
        }
    }

    fn sentence(&self, ex: &Example, doc: usize, sentence: usize) -> MentionSet {
        let title = &ex.documents[doc].title;
        self.examples
            .get(&ex.id)
            .and_then(|a| a.context.get(title))
            .and_then(|sents| sents.get(sentence))
            .map(MentionSet::from_strings)
            .unwrap_or_else(|| annotate(&ex.documents[doc].sentences[sentence]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capitalized_run_is_an_entity() {
        let m = annotate("Shirley Temple Black was an American actress");
        assert!(m.contains("shirley temple black"));
        assert!(m.contains("american actress"));
        assert!(!m.contains("shirley temple"));
    }

    #[test]
    fn connectors_bridge_capitalized_tokens() {
        let m = annotate("the film Kiss and Tell");
        assert!(m.contains("kiss and tell"), "{m:?}");
        let m = annotate("served as Chief of Protocol of the United States.");
        assert!(m.contains("chief of protocol of the united states"), "{m:?}");
    }

    #[test]
    fn empty_text_has_no_mentions() {
        assert!(annotate("").is_empty());
        assert!(annotate("   ").is_empty());
    }

    #[test]
    fn leading_question_words_are_not_entities() {
        let m = annotate("What is the color of the car that Brovik drives?");
        assert!(m.contains("brovik"));
        assert!(!m.iter().any(|s| s.starts_with("what")));
    }

    #[test]
    fn possessive_does_not_join_mentions() {
        let m = annotate("Zentrik's color is Mavu.");
        assert!(m.contains("zentrik"));
        assert!(m.contains("color"));
        assert!(m.contains("mavu"));
    }

    #[test]
    fn spans_point_into_source() {
        let text = "Shirley Temple Black was an American actress";
        let m = annotate(text);
        for (mention, spans) in &m.mentions {
            for &(s, e) in spans {
                assert_eq!(&normalize_mention(&text[s..e]), mention);
            }
        }
    }

    #[test]
    fn matching_is_exact_intersection() {
        let a = MentionSet::from_strings(["Shirley Temple"]);
        let b = MentionSet::from_strings(["shirley temple"]);
        let c = MentionSet::from_strings(["shirley temple black"]);
        assert!(mentions_match(&a, &b));
        assert!(mentions_match(&b, &a));
        assert!(mentions_match(&a, &a));
        assert!(!mentions_match(&c, &b));
        assert!(!mentions_match(&MentionSet::from_strings(["x"]), &b));
    }

    #[test]
    fn annotation_is_deterministic() {
        let text = "Kiss and Tell is a 1945 American comedy film starring Shirley Temple.";
        assert_eq!(annotate(text), annotate(text));
    }

    #[test]
    fn file_overrides_heuristic() {
        use crate::data::{fixtures::KISS_AND_TELL, parse_dataset};
        let ex = parse_dataset(KISS_AND_TELL.as_bytes()).unwrap().remove(0);
        let json = format!(
            r#"{{"{}": {{"question": ["Corliss Archer"],
                "context": {{"Shirley Temple": [["Shirley Temple"], []]}}}}}}"#,
            ex.id
        );
        let ann = FileAnnotator::from_json(json.as_bytes()).unwrap();
        assert_eq!(ann.question(&ex), MentionSet::from_strings(["corliss archer"]));
        assert_eq!(ann.sentence(&ex, 2, 0), MentionSet::from_strings(["shirley temple"]));
        assert!(ann.sentence(&ex, 2, 1).is_empty());
        assert_eq!(ann.sentence(&ex, 1, 0), annotate(&ex.documents[1].sentences[0]));
    }
}
