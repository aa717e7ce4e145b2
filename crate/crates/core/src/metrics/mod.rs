//! Scores: macro-F1 (NER, RE, LP), MRR (FAR) and the fact-overlap proxy (QA).
//!
//! Counts are aggregated as integers and divided only when a report is built,
//! so sharded scoring merges exactly. Unparseable predictions are scored as
//! wrong: an empty entity set for NER, no class for RE/LP, the last rank for FAR,
//! and zero overlap for QA.

pub mod fact;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::labels::{RELATION_LABELS, RELEVANCE_LABELS};
use crate::corpus::{
    FarInstance, LpInstance, NerInstance, QaInstance, ReInstance, Task, TaskInstance,
};
use crate::parse::Prediction;

pub use fact::fact_overlap;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no instances to score")]
    EmptyInput,
    #[error("gold label `{0}` is not in the label set")]
    UnknownGold(String),
    #[error("instances must share one task")]
    MixedTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreName {
    MacroF1,
    Mrr,
    FactOverlap,
}

impl ScoreName {
    pub fn for_task(task: Task) -> ScoreName {
        match task {
            Task::Ner | Task::Re | Task::Lp => ScoreName::MacroF1,
            Task::Far => ScoreName::Mrr,
            Task::Qa => ScoreName::FactOverlap,
        }
    }

    pub fn is_proxy(self) -> bool {
        self == ScoreName::FactOverlap
    }
}

impl fmt::Display for ScoreName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreName::MacroF1 => "macro_f1",
            ScoreName::Mrr => "mrr",
            ScoreName::FactOverlap => "fact_overlap(proxy)",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub dataset: String,
    pub score_name: ScoreName,
    pub score: f64,
    pub n_instances: usize,
    pub n_unparseable: usize,
    /// Present exactly for macro-F1 reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<BTreeMap<String, ClassScore>>,
}

impl MetricReport {
    pub fn with_dataset(mut self, dataset: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self
    }
}

/// True/false positive and false negative counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn merge(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// P, R and F1 with the all-zero convention: a class with no gold and no
    /// predicted items scores 1.
    pub fn scores(self) -> (f64, f64, f64) {
        if self.tp == 0 && self.fp == 0 && self.fn_ == 0 {
            return (1.0, 1.0, 1.0);
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }
}

fn class_score(c: Counts, support: usize) -> ClassScore {
    let (precision, recall, f1) = c.scores();
    ClassScore {
        precision,
        recall,
        f1,
        support,
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn norm_entity(e: &str) -> String {
    e.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Macro-F1 over entity types with set semantics per instance.
pub fn ner_macro_f1(pairs: &[(NerInstance, Prediction)]) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut per_type: BTreeMap<String, (Counts, usize)> = BTreeMap::new();
    let mut unparseable = 0;
    for (inst, pred) in pairs {
        let predicted: Vec<String> = match pred {
            Prediction::EntityList(items) => items.iter().map(|e| norm_entity(e)).collect(),
            _ => {
                unparseable += 1;
                Vec::new()
            }
        };
        let pred_set: std::collections::BTreeSet<String> = predicted.into_iter().collect();
        let gold_set: std::collections::BTreeSet<String> =
            inst.gold_entities.iter().map(|e| norm_entity(e)).collect();
        let tp = pred_set.intersection(&gold_set).count();
        let entry = per_type.entry(inst.entity_type.clone()).or_default();
        entry.0.merge(Counts {
            tp,
            fp: pred_set.len() - tp,
            fn_: gold_set.len() - tp,
        });
        entry.1 += gold_set.len();
    }
    let per_class: BTreeMap<String, ClassScore> = per_type
        .into_iter()
        .map(|(t, (c, support))| (t, class_score(c, support)))
        .collect();
    Ok(MetricReport {
        task: Task::Ner,
        dataset: String::new(),
        score_name: ScoreName::MacroF1,
        score: mean(per_class.values().map(|c| c.f1)),
        n_instances: pairs.len(),
        n_unparseable: unparseable,
        per_class: Some(per_class),
    })
}

/// One-vs-rest macro-F1. `None` predictions count as a miss for the gold class
/// and a false positive for no class. Classes with zero support are reported
/// but excluded from the mean.
pub fn classification_macro_f1(
    task: Task,
    pairs: &[(String, Option<String>)],
    label_set: &[&str],
) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut counts: BTreeMap<&str, (Counts, usize)> =
        label_set.iter().map(|l| (*l, (Counts::default(), 0))).collect();
    let mut unparseable = 0;
    for (gold, pred) in pairs {
        let gold_entry = counts
            .get_mut(gold.as_str())
            .ok_or_else(|| MetricError::UnknownGold(gold.clone()))?;
        gold_entry.1 += 1;
        match pred {
            Some(p) if p == gold => gold_entry.0.tp += 1,
            Some(p) => {
                gold_entry.0.fn_ += 1;
                if let Some(pred_entry) = counts.get_mut(p.as_str()) {
                    pred_entry.0.fp += 1;
                }
            }
            None => {
                gold_entry.0.fn_ += 1;
                unparseable += 1;
            }
        }
    }
    let per_class: BTreeMap<String, ClassScore> = counts
        .into_iter()
        .map(|(l, (c, support))| (l.to_string(), class_score(c, support)))
        .collect();
    let score = mean(per_class.values().filter(|c| c.support > 0).map(|c| c.f1));
    Ok(MetricReport {
        task,
        dataset: String::new(),
        score_name: ScoreName::MacroF1,
        score,
        n_instances: pairs.len(),
        n_unparseable: unparseable,
        per_class: Some(per_class),
    })
}

pub fn re_macro_f1(pairs: &[(ReInstance, Prediction)]) -> Result<MetricReport, MetricError> {
    let labels: Vec<(String, Option<String>)> = pairs
        .iter()
        .map(|(inst, pred)| {
            let p = match pred {
                Prediction::RelationLabel(l) => Some(l.clone()),
                _ => None,
            };
            (inst.gold_relation.clone(), p)
        })
        .collect();
    classification_macro_f1(Task::Re, &labels, &RELATION_LABELS)
}

pub fn lp_macro_f1(pairs: &[(LpInstance, Prediction)]) -> Result<MetricReport, MetricError> {
    let bit = |b: bool| if b { "1" } else { "0" }.to_string();
    let labels: Vec<(String, Option<String>)> = pairs
        .iter()
        .map(|(inst, pred)| {
            let p = match pred {
                Prediction::Relevance(b) => Some(bit(*b)),
                _ => None,
            };
            (bit(inst.label), p)
        })
        .collect();
    classification_macro_f1(Task::Lp, &labels, &RELEVANCE_LABELS)
}

/// Rank of the gold-best option; `None` when the prediction is not a usable
/// ranking of this instance's answers.
pub fn gold_best_rank(inst: &FarInstance, pred: &Prediction) -> Option<usize> {
    match pred {
        Prediction::Ranking(ranks) if ranks.len() == inst.answers.len() => {
            ranks.get(inst.best_index).map(|&r| r as usize)
        }
        _ => None,
    }
}

/// Mean reciprocal rank of the gold-best answer. Unusable predictions rank it last.
pub fn mrr(pairs: &[(FarInstance, Prediction)]) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut unparseable = 0;
    let score = mean(pairs.iter().map(|(inst, pred)| {
        let rank = gold_best_rank(inst, pred).unwrap_or_else(|| {
            unparseable += 1;
            inst.answers.len()
        });
        1.0 / rank.max(1) as f64
    }));
    Ok(MetricReport {
        task: Task::Far,
        dataset: String::new(),
        score_name: ScoreName::Mrr,
        score,
        n_instances: pairs.len(),
        n_unparseable: unparseable,
        per_class: None,
    })
}

/// Mean fact overlap between reference and generated answers.
pub fn qa_fact_overlap(pairs: &[(QaInstance, Prediction)]) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut unparseable = 0;
    let score = mean(pairs.iter().map(|(inst, pred)| match pred {
        Prediction::AnswerText(text) => fact_overlap(&inst.reference_answer, text),
        _ => {
            unparseable += 1;
            0.0
        }
    }));
    Ok(MetricReport {
        task: Task::Qa,
        dataset: String::new(),
        score_name: ScoreName::FactOverlap,
        score,
        n_instances: pairs.len(),
        n_unparseable: unparseable,
        per_class: None,
    })
}

/// Scores a homogeneous list of (instance, prediction) pairs with the task's metric.
pub fn score_pairs(pairs: &[(TaskInstance, Prediction)]) -> Result<MetricReport, MetricError> {
    let task = pairs.first().ok_or(MetricError::EmptyInput)?.0.task();
    macro_rules! collect {
        ($variant:ident) => {
            pairs
                .iter()
                .map(|(i, p)| match i {
                    TaskInstance::$variant(x) => Ok((x.clone(), p.clone())),
                    _ => Err(MetricError::MixedTasks),
                })
                .collect::<Result<Vec<_>, _>>()?
        };
    }
    match task {
        Task::Ner => ner_macro_f1(&collect!(Ner)),
        Task::Re => re_macro_f1(&collect!(Re)),
        Task::Lp => lp_macro_f1(&collect!(Lp)),
        Task::Far => mrr(&collect!(Far)),
        Task::Qa => qa_fact_overlap(&collect!(Qa)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceDataset;

    fn ner(ty: &str, gold: &[&str]) -> NerInstance {
        NerInstance {
            id: format!("{ty}-{}", gold.join("_")),
            text: "t".into(),
            entity_type: ty.into(),
            gold_entities: gold.iter().map(|s| s.to_string()).collect(),
            source_dataset: SourceDataset::DistAlaner,
            is_negative: false,
        }
    }

    fn ents(items: &[&str]) -> Prediction {
        Prediction::EntityList(items.iter().map(|s| s.to_string()).collect())
    }

    fn far(n: usize, best: usize) -> FarInstance {
        FarInstance {
            id: "f".into(),
            question: "q".into(),
            answers: (0..n).map(|i| i.to_string()).collect(),
            best_index: best,
        }
    }

    #[test]
    fn ner_perfect_and_empty() {
        let pairs = vec![
            (ner("error", &["segfault"]), ents(&["segfault"])),
            (ner("commands", &["ls", "cd"]), ents(&["cd", "LS"])),
        ];
        assert_eq!(ner_macro_f1(&pairs).unwrap().score, 1.0);
        let empty: Vec<_> = pairs.iter().map(|(i, _)| (i.clone(), ents(&[]))).collect();
        assert_eq!(ner_macro_f1(&empty).unwrap().score, 0.0);
    }

    #[test]
    fn ner_two_type_example() {
        let pairs = vec![
            (ner("packages", &["x", "y"]), ents(&["x"])),
            (ner("commands", &["z"]), ents(&["z", "w"])),
        ];
        let r = ner_macro_f1(&pairs).unwrap();
        assert!((r.score - 2.0 / 3.0).abs() < 1e-12);
        let pc = r.per_class.unwrap();
        assert!((pc["packages"].recall - 0.5).abs() < 1e-12);
        assert!((pc["commands"].precision - 0.5).abs() < 1e-12);
        assert_eq!(pc["packages"].support, 2);
    }

    #[test]
    fn ner_empty_gold_conventions() {
        let correct_empty = vec![(ner("error", &[]), ents(&[]))];
        assert_eq!(ner_macro_f1(&correct_empty).unwrap().score, 1.0);
        let hallucinated = vec![(ner("error", &[]), ents(&["oops"]))];
        assert_eq!(ner_macro_f1(&hallucinated).unwrap().score, 0.0);
    }

    #[test]
    fn ner_unparseable_counts_as_empty() {
        let pairs = vec![(
            ner("error", &["e"]),
            Prediction::Unparseable {
                raw: "?".into(),
                reason: "x".into(),
            },
        )];
        let r = ner_macro_f1(&pairs).unwrap();
        assert_eq!(r.score, 0.0);
        assert_eq!(r.n_unparseable, 1);
    }

    #[test]
    fn classification_examples() {
        let s = |x: &str| x.to_string();
        let perfect: Vec<_> = RELATION_LABELS.iter().map(|l| (s(l), Some(s(l)))).collect();
        assert_eq!(
            classification_macro_f1(Task::Re, &perfect, &RELATION_LABELS).unwrap().score,
            1.0
        );
        let flipped = vec![(s("1"), Some(s("0"))), (s("0"), Some(s("1")))];
        assert_eq!(
            classification_macro_f1(Task::Lp, &flipped, &RELEVANCE_LABELS).unwrap().score,
            0.0
        );
        let mixed = vec![
            (s("1"), Some(s("1"))),
            (s("1"), Some(s("0"))),
            (s("0"), Some(s("0"))),
            (s("0"), None),
        ];
        let r = classification_macro_f1(Task::Lp, &mixed, &RELEVANCE_LABELS).unwrap();
        let pc = r.per_class.as_ref().unwrap();
        assert!((pc["1"].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((pc["0"].f1 - 0.5).abs() < 1e-12);
        assert!((r.score - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(r.n_unparseable, 1);
    }

    #[test]
    fn zero_support_classes_excluded_from_mean() {
        let s = |x: &str| x.to_string();
        let pairs = vec![(s("conflict"), Some(s("conflict")))];
        let r = classification_macro_f1(Task::Re, &pairs, &RELATION_LABELS).unwrap();
        assert_eq!(r.score, 1.0);
        assert_eq!(r.per_class.unwrap().len(), 5);
    }

    #[test]
    fn unknown_gold_label() {
        let pairs = vec![("depends".to_string(), None)];
        assert_eq!(
            classification_macro_f1(Task::Re, &pairs, &RELATION_LABELS).unwrap_err(),
            MetricError::UnknownGold("depends".into())
        );
    }

    #[test]
    fn mrr_examples() {
        let best_first = vec![(far(3, 0), Prediction::Ranking(vec![1, 2, 3]))];
        assert_eq!(mrr(&best_first).unwrap().score, 1.0);
        let second = vec![(far(3, 0), Prediction::Ranking(vec![2, 1, 3]))];
        assert_eq!(mrr(&second).unwrap().score, 0.5);
        let two = vec![
            (far(4, 1), Prediction::Ranking(vec![2, 1, 3, 4])),
            (far(4, 1), Prediction::Ranking(vec![1, 4, 2, 3])),
        ];
        assert!((mrr(&two).unwrap().score - 0.625).abs() < 1e-12);
    }

    #[test]
    fn mrr_unusable_predictions_rank_last() {
        let pairs = vec![
            (
                far(5, 0),
                Prediction::Unparseable {
                    raw: String::new(),
                    reason: "x".into(),
                },
            ),
            (far(4, 0), Prediction::Ranking(vec![1, 2, 3])),
        ];
        let r = mrr(&pairs).unwrap();
        assert!((r.score - (0.2 + 0.25) / 2.0).abs() < 1e-12);
        assert_eq!(r.n_unparseable, 2);
        assert!(r.per_class.is_none());
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(ner_macro_f1(&[]).unwrap_err(), MetricError::EmptyInput);
        assert_eq!(mrr(&[]).unwrap_err(), MetricError::EmptyInput);
        assert_eq!(qa_fact_overlap(&[]).unwrap_err(), MetricError::EmptyInput);
        assert_eq!(score_pairs(&[]).unwrap_err(), MetricError::EmptyInput);
    }

    #[test]
    fn counts_merge_exactly() {
        let mut a = Counts { tp: 1, fp: 2, fn_: 3 };
        a.merge(Counts { tp: 4, fp: 0, fn_: 1 });
        assert_eq!(a, Counts { tp: 5, fp: 2, fn_: 4 });
    }

    #[test]
    fn score_name_display() {
        assert_eq!(ScoreName::FactOverlap.to_string(), "fact_overlap(proxy)");
        assert_eq!(
            serde_json::to_string(&ScoreName::FactOverlap).unwrap(),
            "\"fact_overlap\""
        );
    }
}
