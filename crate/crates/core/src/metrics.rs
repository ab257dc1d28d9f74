//! Answer, supporting-fact, joint and selector metrics with the benchmark's
//! normalization rules, plus the per-reasoning-type breakdown.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{Example, SupportingFact};
use crate::text::normalize_answer;

/// Exact match, F1, precision and recall of one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Score {
    fn from_counts(em: bool, overlap: f64, n_pred: f64, n_gold: f64) -> Self {
        let precision = if n_pred > 0.0 { overlap / n_pred } else { 0.0 };
        let recall = if n_gold > 0.0 { overlap / n_gold } else { 0.0 };
        Self {
            em: f64::from(u8::from(em)),
            f1: f1(precision, recall),
            precision,
            recall,
        }
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Answer EM and token-multiset F1 after normalization.
///
/// A yes/no/noanswer string on either side scores zero F1 unless both sides
/// are identical after normalization.
pub fn answer_metrics(pred: &str, gold: &str) -> Score {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let em = p == g;
    let special = ["yes", "no", "noanswer"];
    if (special.contains(&p.as_str()) || special.contains(&g.as_str())) && p != g {
        return Score::default();
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in g.split_whitespace() {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0i64;
    for t in p.split_whitespace() {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    Score::from_counts(
        em,
        overlap as f64,
        p.split_whitespace().count() as f64,
        g.split_whitespace().count() as f64,
    )
}

/// Set EM and F1 over supporting facts.
pub fn support_metrics(pred: &BTreeSet<SupportingFact>, gold: &BTreeSet<SupportingFact>) -> Score {
    let overlap = pred.intersection(gold).count() as f64;
    Score::from_counts(pred == gold, overlap, pred.len() as f64, gold.len() as f64)
}

/// Joint EM is the product of EMs; joint precision and recall are products.
pub fn joint_metrics(answer: &Score, support: &Score) -> Score {
    let precision = answer.precision * support.precision;
    let recall = answer.recall * support.recall;
    Score {
        em: answer.em * support.em,
        f1: f1(precision, recall),
        precision,
        recall,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectorReport {
    pub n: usize,
    pub em_s: f64,
    pub recall_s: f64,
    /// Averaged over examples that have a span-bearing gold document.
    pub acc_span: f64,
    pub n_span: usize,
}

/// One example's selector outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionCase {
    pub predicted: BTreeSet<usize>,
    pub gold: BTreeSet<usize>,
    pub span_doc: Option<usize>,
}

impl SelectionCase {
    pub fn from_example(ex: &Example, predicted: &[usize]) -> Self {
        Self {
            predicted: predicted.iter().copied().collect(),
            gold: ex.gold_indices().into_iter().collect(),
            span_doc: ex.documents.iter().position(|d| d.score == 2),
        }
    }
}

pub fn selector_metrics(cases: &[SelectionCase]) -> SelectorReport {
    let n = cases.len();
    if n == 0 {
        return SelectorReport::default();
    }
    let mut em = 0.0;
    let mut recall = 0.0;
    let mut span_hits = 0.0;
    let mut n_span = 0;
    for c in cases {
        em += f64::from(u8::from(c.predicted == c.gold));
        if !c.gold.is_empty() {
            recall += c.gold.intersection(&c.predicted).count() as f64 / c.gold.len() as f64;
        }
        if let Some(d) = c.span_doc {
            n_span += 1;
            span_hits += f64::from(u8::from(c.predicted.contains(&d)));
        }
    }
    SelectorReport {
        n,
        em_s: em / n as f64,
        recall_s: recall / n as f64,
        acc_span: if n_span > 0 { span_hits / n_span as f64 } else { 0.0 },
        n_span,
    }
}

/// Prediction file: answers, supporting facts and optionally the selected documents.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub answer: BTreeMap<String, String>,
    pub sp: BTreeMap<String, Vec<(String, usize)>>,
    /// Titles of the documents the selector chose, in context order.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub selected: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub ans_em: f64,
    pub ans_f1: f64,
    pub sup_em: f64,
    pub sup_f1: f64,
    pub joint_em: f64,
    pub joint_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<SelectorReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_type: BTreeMap<String, EvalReport>,
}

/// Per-example answer, support and joint scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleScores {
    pub answer: Score,
    pub support: Score,
    pub joint: Score,
}

pub fn score_example(ex: &Example, preds: &Predictions) -> ExampleScores {
    let answer = answer_metrics(preds.answer.get(&ex.id).map_or("", String::as_str), &ex.answer_text);
    let pred_sp: BTreeSet<SupportingFact> = preds
        .sp
        .get(&ex.id)
        .into_iter()
        .flatten()
        .map(|(title, sentence)| SupportingFact {
            title: title.clone(),
            sentence: *sentence,
        })
        .collect();
    let gold_sp: BTreeSet<SupportingFact> = ex.supporting_facts.iter().cloned().collect();
    let support = support_metrics(&pred_sp, &gold_sp);
    ExampleScores {
        answer,
        support,
        joint: joint_metrics(&answer, &support),
    }
}

fn aggregate(scores: &[ExampleScores]) -> EvalReport {
    let n = scores.len();
    let mean = |f: &dyn Fn(&ExampleScores) -> f64| {
        if n == 0 {
            0.0
        } else {
            scores.iter().map(f).sum::<f64>() / n as f64
        }
    };
    EvalReport {
        n,
        ans_em: mean(&|s| s.answer.em),
        ans_f1: mean(&|s| s.answer.f1),
        sup_em: mean(&|s| s.support.em),
        sup_f1: mean(&|s| s.support.f1),
        joint_em: mean(&|s| s.joint.em),
        joint_f1: mean(&|s| s.joint.f1),
        selector: None,
        by_type: BTreeMap::new(),
    }
}

/// Scores predictions against every gold example; missing predictions score zero.
pub fn evaluate(gold: &[Example], preds: &Predictions, by_type: bool) -> EvalReport {
    let scores: Vec<ExampleScores> = gold.iter().map(|ex| score_example(ex, preds)).collect();
    let mut report = aggregate(&scores);
    if !preds.selected.is_empty() {
        let cases: Vec<SelectionCase> = gold
            .iter()
            .map(|ex| {
                let chosen: Vec<usize> = preds
                    .selected
                    .get(&ex.id)
                    .into_iter()
                    .flatten()
                    .filter_map(|t| ex.document_index(t))
                    .collect();
                SelectionCase::from_example(ex, &chosen)
            })
            .collect();
        report.selector = Some(selector_metrics(&cases));
    }
    if by_type {
        for kind in [crate::data::ReasoningType::Bridge, crate::data::ReasoningType::Comparison] {
            let subset: Vec<ExampleScores> = gold
                .iter()
                .zip(&scores)
                .filter(|(ex, _)| ex.reasoning_type == kind)
                .map(|(_, s)| *s)
                .collect();
            report.by_type.insert(kind.as_str().to_string(), aggregate(&subset));
        }
    }
    report
}

impl EvalReport {
    /// Plain-text table of the headline numbers, one row per subset.
    pub fn table(&self) -> String {
        let mut rows = vec![("all".to_string(), self)];
        rows.extend(self.by_type.iter().map(|(k, v)| (k.clone(), v)));
        let mut out = format!(
            "{:<12} {:>6} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8}\n",
            "subset", "n", "ans_em", "ans_f1", "sup_em", "sup_f1", "joint_em", "joint_f1"
        );
        for (name, r) in rows {
            out.push_str(&format!(
                "{:<12} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>8.4} {:>8.4}\n",
                name, r.n, r.ans_em, r.ans_f1, r.sup_em, r.sup_f1, r.joint_em, r.joint_f1
            ));
        }
        if let Some(s) = &self.selector {
            out.push_str(&format!(
                "selector     EM_S {:.4}  Recall_S {:.4}  Acc_span {:.4}\n",
                s.em_s, s.recall_s, s.acc_span
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fixtures::KISS_AND_TELL, parse_dataset};

    fn facts(items: &[(&str, usize)]) -> BTreeSet<SupportingFact> {
        items
            .iter()
            .map(|(t, s)| SupportingFact { title: t.to_string(), sentence: *s })
            .collect()
    }

    #[test]
    fn answer_fixtures() {
        let s = answer_metrics("Chief of Protocol", "Chief of Protocol");
        assert_eq!((s.em, s.f1), (1.0, 1.0));
        let s = answer_metrics("the Chief of Protocol", "Chief of Protocol");
        assert_eq!((s.em, s.f1), (1.0, 1.0));
        let s = answer_metrics("Protocol Chief", "Chief of Protocol");
        assert_eq!(s.em, 0.0);
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn yes_no_need_exact_agreement() {
        assert_eq!(answer_metrics("yes", "no").f1, 0.0);
        assert_eq!(answer_metrics("yes", "yes the").f1, 1.0);
        assert_eq!(answer_metrics("yes it is", "yes").f1, 0.0);
    }

    #[test]
    fn support_fixtures() {
        let gold = facts(&[("A", 0), ("A", 1), ("B", 0)]);
        let s = support_metrics(&gold.clone(), &gold);
        assert_eq!((s.em, s.f1), (1.0, 1.0));
        let s = support_metrics(&facts(&[("A", 0), ("B", 0), ("C", 2)]), &gold);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        let s = support_metrics(&BTreeSet::new(), &gold);
        assert_eq!((s.em, s.f1), (0.0, 0.0));
    }

    #[test]
    fn joint_fixtures() {
        let perfect = Score { em: 1.0, f1: 1.0, precision: 1.0, recall: 1.0 };
        let j = joint_metrics(&perfect, &perfect);
        assert_eq!((j.em, j.f1), (1.0, 1.0));
        let half = Score { em: 0.0, f1: 0.5, precision: 0.5, recall: 0.5 };
        let j = joint_metrics(&perfect, &half);
        assert!((j.f1 - 0.5).abs() < 1e-12);
        assert_eq!(j.em, 0.0);
    }

    #[test]
    fn selector_fixtures() {
        let both = SelectionCase { predicted: [0, 1].into(), gold: [0, 1].into(), span_doc: Some(1) };
        let r = selector_metrics(std::slice::from_ref(&both));
        assert_eq!((r.em_s, r.recall_s, r.acc_span), (1.0, 1.0, 1.0));
        let one = SelectionCase { predicted: [0, 5].into(), gold: [0, 1].into(), span_doc: Some(1) };
        let r = selector_metrics(&[one]);
        assert_eq!((r.em_s, r.recall_s, r.acc_span), (0.0, 0.5, 0.0));
    }

    #[test]
    fn identical_predictions_score_one_and_subsets_weight_by_size() {
        let gold = parse_dataset(KISS_AND_TELL.as_bytes()).unwrap();
        let mut preds = Predictions::default();
        for ex in &gold {
            preds.answer.insert(ex.id.clone(), ex.answer_text.clone());
            preds.sp.insert(
                ex.id.clone(),
                ex.supporting_facts.iter().map(|f| (f.title.clone(), f.sentence)).collect(),
            );
        }
        let r = evaluate(&gold, &preds, true);
        assert_eq!((r.ans_em, r.sup_em, r.joint_em, r.joint_f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.by_type["comparison"].n, 0);
        assert_eq!(r.by_type["bridge"].n, 1);
        let empty = evaluate(&gold, &Predictions::default(), false);
        assert_eq!((empty.ans_em, empty.joint_f1), (0.0, 0.0));
        assert!(r.table().contains("bridge"));
    }
}
