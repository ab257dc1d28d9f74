//! Sentence graph over the reasoner context with three typed edge sets.
//!
//! Type 1 joins sentences of the same document. Type 2 joins sentences of
//! different documents that both mention something from the question (not
//! necessarily the same mention). Type 3 joins sentences of different
//! documents that share a mention.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::annotate::{Annotator, MentionSet};
use crate::data::Example;
use crate::embed::TokenLayout;

pub const NUM_RELATIONS: usize = 3;

/// Which edge types to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTypes(pub [bool; NUM_RELATIONS]);

impl Default for EdgeTypes {
    fn default() -> Self {
        Self([true; NUM_RELATIONS])
    }
}

impl EdgeTypes {
    /// Parses a list such as `"1,2,3"` or `"2,3"`.
    pub fn parse(list: &str) -> Result<Self, String> {
        let mut on = [false; NUM_RELATIONS];
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse::<usize>() {
                Ok(r @ 1..=NUM_RELATIONS) => on[r - 1] = true,
                _ => return Err(format!("unknown edge type {part:?}, expected 1, 2 or 3")),
            }
        }
        Ok(Self(on))
    }

    pub fn enabled(&self, relation: usize) -> bool {
        self.0[relation]
    }
}

impl std::fmt::Display for EdgeTypes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let on: Vec<String> = (0..NUM_RELATIONS)
            .filter(|&r| self.0[r])
            .map(|r| (r + 1).to_string())
            .collect();
        f.write_str(&on.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    /// Index into the token layout's sentence spans.
    pub span: usize,
    pub doc: usize,
    pub title: String,
    pub sentence: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceGraph {
    pub nodes: Vec<Node>,
    /// `neighbors[r][j]`: sorted neighbours of node `j` under relation `r` (0-based).
    pub neighbors: [Vec<Vec<usize>>; NUM_RELATIONS],
}

impl SentenceGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Undirected edges `(i, j, relation)` with `i < j`, relation 1-based.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (r, adj) in self.neighbors.iter().enumerate() {
            for (i, ns) in adj.iter().enumerate() {
                out.extend(ns.iter().filter(|&&j| j > i).map(|&j| (i, j, r + 1)));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Builds the graph from per-node document ids and mention sets.
pub fn build_graph(
    docs: &[usize],
    question: &MentionSet,
    sentences: &[MentionSet],
    edges: EdgeTypes,
) -> [Vec<Vec<usize>>; NUM_RELATIONS] {
    assert_eq!(docs.len(), sentences.len(), "one mention set per node");
    let n = docs.len();
    let mut sets: [Vec<BTreeSet<usize>>; NUM_RELATIONS] =
        std::array::from_fn(|_| vec![BTreeSet::new(); n]);
    let mut link = |r: usize, a: usize, b: usize| {
        sets[r][a].insert(b);
        sets[r][b].insert(a);
    };

    if edges.enabled(0) {
        let mut by_doc: HashMap<usize, Vec<usize>> = HashMap::new();
        for (j, &d) in docs.iter().enumerate() {
            by_doc.entry(d).or_default().push(j);
        }
        for group in by_doc.values() {
            for (x, &a) in group.iter().enumerate() {
                for &b in &group[x + 1..] {
                    link(0, a, b);
                }
            }
        }
    }

    if edges.enabled(1) {
        let hits: Vec<usize> = (0..n)
            .filter(|&j| sentences[j].iter().any(|m| question.contains(m)))
            .collect();
        for (x, &a) in hits.iter().enumerate() {
            for &b in &hits[x + 1..] {
                if docs[a] != docs[b] {
                    link(1, a, b);
                }
            }
        }
    }

    if edges.enabled(2) {
        let mut index: HashMap<&str, Vec<usize>> = HashMap::new();
        for (j, s) in sentences.iter().enumerate() {
            for m in s.iter() {
                index.entry(m).or_default().push(j);
            }
        }
        for holders in index.values() {
            for (x, &a) in holders.iter().enumerate() {
                for &b in &holders[x + 1..] {
                    if docs[a] != docs[b] {
                        link(2, a, b);
                    }
                }
            }
        }
    }

    sets.map(|adj| adj.into_iter().map(|s| s.into_iter().collect()).collect())
}

/// Graph over the sentences present in `layout`, one node per sentence span.
pub fn graph_for_layout(
    ex: &Example,
    layout: &TokenLayout,
    annotator: &dyn Annotator,
    edges: EdgeTypes,
) -> SentenceGraph {
    let question = annotator.question(ex);
    let nodes: Vec<Node> = layout
        .sentence_spans
        .iter()
        .enumerate()
        .map(|(k, s)| Node {
            span: k,
            doc: s.doc,
            title: ex.documents[s.doc].title.clone(),
            sentence: s.sentence,
        })
        .collect();
    let mentions: Vec<MentionSet> = nodes
        .iter()
        .map(|n| annotator.sentence(ex, n.doc, n.sentence))
        .collect();
    let docs: Vec<usize> = nodes.iter().map(|n| n.doc).collect();
    let neighbors = build_graph(&docs, &question, &mentions, edges);
    SentenceGraph { nodes, neighbors }
}
