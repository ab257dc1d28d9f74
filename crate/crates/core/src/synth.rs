//! Seeded generator of templated two-hop examples in the HotpotQA shape.
//!
//! Bridge questions chain two documents through a bridge entity. Comparison
//! questions ask whether two entities share an attribute value. Distractor
//! documents reuse the templates with fresh entities and with categories and
//! attributes the question does not use.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_gold_labels, AnswerType, Document, Example, ReasoningType, SupportingFact};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_examples: usize,
    pub n_distractors: usize,
    /// Size of the entity-name pool.
    pub vocab_size: usize,
    /// Fraction of bridge examples.
    pub bridge_ratio: f64,
    /// Filler sentences added to every document.
    pub padding: usize,
    /// Prefix of generated example ids.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_examples: 1000,
            n_distractors: 8,
            vocab_size: 4000,
            bridge_ratio: 0.8,
            padding: 1,
            id_prefix: "synth".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.bridge_ratio > 0.0 && self.bridge_ratio <= 1.0) {
            return Err(format!("bridge ratio {} must lie in (0, 1]", self.bridge_ratio));
        }
        let needed = 8 + self.n_distractors * 3 + (self.n_distractors + 2) * self.padding * 2;
        if self.vocab_size < needed {
            return Err(format!(
                "vocab size {} too small, need at least {needed} entity names",
                self.vocab_size
            ));
        }
        Ok(())
    }
}

/// Object categories with the verb that relates an owner to them.
const CATEGORIES: &[(&str, &str)] = &[
    ("car", "drives"),
    ("book", "wrote"),
    ("song", "sang"),
    ("company", "founded"),
    ("house", "built"),
    ("film", "directed"),
    ("boat", "sails"),
    ("painting", "painted"),
    ("horse", "rides"),
    ("school", "attended"),
    ("band", "joined"),
    ("garden", "planted"),
];

const ATTRIBUTES: &[&str] = &[
    "color", "capital", "mascot", "founder", "owner", "language", "currency", "motto", "anthem",
    "rival", "emblem", "patron",
];

const FILLER: &[&str] = &[
    "{T} is located in {P}.",
    "{T} was visited by {P}.",
    "{T} is known for {P}.",
    "{T} borders {P}.",
];

const ONSETS: &[&str] = &[
    "b", "br", "d", "dr", "f", "g", "gr", "k", "kr", "l", "m", "n", "p", "pr", "r", "s", "st", "t",
    "tr", "v", "z", "zh", "sh", "th",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ei"];
const CODAS: &[&str] = &["", "", "n", "k", "r", "l", "s", "m", "x", "v"];

fn syllable(rng: &mut impl Rng) -> String {
    format!(
        "{}{}{}",
        ONSETS.choose(rng).expect("non-empty"),
        VOWELS.choose(rng).expect("non-empty"),
        CODAS.choose(rng).expect("non-empty")
    )
}

/// Pool of distinct capitalized nonsense names that are not English words used
/// by the templates.
fn entity_pool(seed: u64, size: usize) -> Vec<String> {
    let mut rng = stream(seed, "synth/entities");
    let reserved: HashSet<String> = CATEGORIES
        .iter()
        .flat_map(|(c, v)| [c.to_string(), v.to_string()])
        .chain(ATTRIBUTES.iter().map(|a| a.to_string()))
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let n = rng.random_range(2..=3);
        let word: String = (0..n).map(|_| syllable(&mut rng)).collect();
        if word.len() < 4 || reserved.contains(&word) || crate::text::is_stopword(&word) {
            continue;
        }
        if seen.insert(word.clone()) {
            let mut chars = word.chars();
            let first = chars.next().expect("non-empty").to_uppercase();
            out.push(first.chain(chars).collect());
        }
    }
    out
}

struct Names<'a> {
    pool: &'a [String],
    order: Vec<usize>,
    next: usize,
}

impl<'a> Names<'a> {
    fn new(pool: &'a [String], rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(rng);
        Self { pool, order, next: 0 }
    }

    fn take(&mut self) -> String {
        let name = self.pool[self.order[self.next]].clone();
        self.next += 1;
        name
    }
}

/// Places `fact` among `padding` filler sentences at a random position.
fn with_padding(fact: String, padding: usize, names: &mut Names, rng: &mut impl Rng) -> (Vec<String>, usize) {
    let mut sentences: Vec<String> = (0..padding)
        .map(|_| {
            FILLER
                .choose(rng)
                .expect("non-empty")
                .replace("{T}", &names.take())
                .replace("{P}", &names.take())
        })
        .collect();
    let at = rng.random_range(0..=padding);
    sentences.insert(at, fact);
    (sentences, at)
}

fn doc(title: String, sentences: Vec<String>) -> Document {
    Document {
        title,
        sentences,
        gold: false,
        score: 0,
    }
}

fn distractor(
    names: &mut Names,
    rng: &mut impl Rng,
    categories: &[(&str, &str)],
    attributes: &[&str],
    padding: usize,
) -> Document {
    let title = names.take();
    let fact = if rng.random_bool(0.5) {
        let (cat, verb) = categories.choose(rng).expect("non-empty");
        format!("The {cat} that {title} {verb} is {}.", names.take())
    } else if rng.random_bool(0.5) {
        format!("{title}'s {} is {}.", attributes.choose(rng).expect("non-empty"), names.take())
    } else {
        format!("The {} of {title} is {}.", attributes.choose(rng).expect("non-empty"), names.take())
    };
    let (sentences, _) = with_padding(fact, padding, names, rng);
    doc(title, sentences)
}

fn example(index: usize, config: &SynthConfig, pool: &[String], rng: &mut impl Rng) -> Example {
    let mut names = Names::new(pool, rng);
    let bridge = rng.random_bool(config.bridge_ratio);
    let cat_idx = rng.random_range(0..CATEGORIES.len());
    let attr_idx = rng.random_range(0..ATTRIBUTES.len());
    let attr = ATTRIBUTES[attr_idx];

    let (question, answer, mut docs, facts) = if bridge {
        let (cat, verb) = CATEGORIES[cat_idx];
        let (z, e, v) = (names.take(), names.take(), names.take());
        let (a_sents, a_at) = with_padding(format!("The {cat} that {z} {verb} is {e}."), config.padding, &mut names, rng);
        let (b_sents, b_at) = with_padding(format!("{e}'s {attr} is {v}."), config.padding, &mut names, rng);
        (
            format!("What is the {attr} of the {cat} that {z} {verb}?"),
            v,
            vec![doc(z.clone(), a_sents), doc(e.clone(), b_sents)],
            vec![(z, a_at), (e, b_at)],
        )
    } else {
        let (a, b) = (names.take(), names.take());
        let va = names.take();
        let same = rng.random_bool(0.5);
        let vb = if same { va.clone() } else { names.take() };
        let (a_sents, a_at) = with_padding(format!("The {attr} of {a} is {va}."), config.padding, &mut names, rng);
        let (b_sents, b_at) = with_padding(format!("The {attr} of {b} is {vb}."), config.padding, &mut names, rng);
        (
            format!("Do {a} and {b} have the same {attr}?"),
            if same { "yes" } else { "no" }.to_string(),
            vec![doc(a.clone(), a_sents), doc(b.clone(), b_sents)],
            vec![(a, a_at), (b, b_at)],
        )
    };

    let other_categories: Vec<(&str, &str)> = CATEGORIES
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != cat_idx)
        .map(|(_, c)| *c)
        .collect();
    let other_attributes: Vec<&str> = ATTRIBUTES
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != attr_idx)
        .map(|(_, a)| *a)
        .collect();
    for _ in 0..config.n_distractors {
        docs.push(distractor(&mut names, rng, &other_categories, &other_attributes, config.padding));
    }
    docs.shuffle(rng);

    let ex = Example {
        id: format!("{}-{index:05}", config.id_prefix),
        question,
        answer_type: AnswerType::of_answer(&answer),
        answer_text: answer,
        documents: docs,
        supporting_facts: facts
            .into_iter()
            .map(|(title, sentence)| SupportingFact { title, sentence })
            .collect(),
        reasoning_type: if bridge {
            ReasoningType::Bridge
        } else {
            ReasoningType::Comparison
        },
        difficulty: None,
        label_warning: None,
    };
    derive_gold_labels(ex)
}

/// Generates `config.n_examples` labelled examples; identical configs give identical output.
pub fn generate(config: &SynthConfig) -> Result<Vec<Example>, String> {
    config.validate()?;
    let pool = entity_pool(config.seed, config.vocab_size);
    let mut rng = stream(config.seed, &format!("synth/examples/{}", config.id_prefix));
    Ok((0..config.n_examples)
        .map(|i| example(i, config, &pool, &mut rng))
        .collect())
}
