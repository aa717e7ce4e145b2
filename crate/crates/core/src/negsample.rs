//! Negative instances: NER queries for entity types absent from a text, and
//! out-of-domain questions whose gold answer is a refusal.
//!
//! Randomness is split per negative: the `j`-th negative draws from ChaCha8
//! keyed by the policy seed on stream `j`. Selection of base instances,
//! out-of-domain question order and interleaving positions use the reserved
//! streams [`BASE_STREAM`], [`QUESTION_STREAM`] and [`POSITION_STREAM`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::corpus::labels::label_key;
use crate::corpus::{NerInstance, QaDomain, QaInstance, Task, TaskInstance};
use crate::rng::{fisher_yates, fnv1a64, rng_for_stream};

pub const DEFAULT_RATIO: f64 = 0.1;
pub const DEFAULT_REFUSAL: &str = "I don't know the answer.";

pub const BASE_STREAM: u64 = u64::MAX;
pub const QUESTION_STREAM: u64 = u64::MAX - 1;
pub const POSITION_STREAM: u64 = u64::MAX - 2;

const BUNDLED_QUESTIONS: &str = include_str!("../data/out_of_domain_questions.txt");

#[derive(Debug, Error, PartialEq)]
pub enum NegError {
    #[error("negative ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("refusal text must be non-empty")]
    EmptyRefusal,
    #[error("question must be non-empty")]
    EmptyQuestion,
    #[error("no absent entity type for `{id}`")]
    NoAbsentType { id: String },
    #[error("negative sampling supports NER or QA instances, got {0}")]
    UnsupportedTask(Task),
    #[error("instances must all share one task")]
    MixedTasks,
    #[error("out-of-domain question list is empty")]
    NoQuestions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativePolicy {
    ratio: f64,
    refusal_text: String,
    seed: u64,
    questions: Vec<String>,
}

impl NegativePolicy {
    pub fn new(ratio: f64, refusal_text: impl Into<String>, seed: u64) -> Result<Self, NegError> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(NegError::InvalidRatio(ratio));
        }
        let refusal_text = refusal_text.into();
        if refusal_text.trim().is_empty() {
            return Err(NegError::EmptyRefusal);
        }
        Ok(NegativePolicy {
            ratio,
            refusal_text,
            seed,
            questions: bundled_questions(),
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        NegativePolicy::new(DEFAULT_RATIO, DEFAULT_REFUSAL, seed).expect("defaults are valid")
    }

    /// Replaces the out-of-domain question pool.
    pub fn with_questions(mut self, questions: Vec<String>) -> Result<Self, NegError> {
        let questions: Vec<String> = questions
            .into_iter()
            .map(|q| q.trim().to_string())
            .filter(|q| !q.is_empty())
            .collect();
        if questions.is_empty() {
            return Err(NegError::NoQuestions);
        }
        self.questions = questions;
        Ok(self)
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn refusal_text(&self) -> &str {
        &self.refusal_text
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn questions(&self) -> &[String] {
        &self.questions
    }

    /// `round(ratio * n)`, rounding halves away from zero.
    pub fn target_count(&self, n: usize) -> usize {
        (self.ratio * n as f64).round() as usize
    }
}

pub fn bundled_questions() -> Vec<String> {
    parse_question_lines(BUNDLED_QUESTIONS)
}

/// Reads a question fixture: plain text, one question per line.
pub fn load_questions(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(parse_question_lines(&fs::read_to_string(path)?))
}

fn parse_question_lines(raw: &str) -> Vec<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Entity types with at least one gold mention, per text.
#[derive(Debug, Clone, Default)]
pub struct AnnotationIndex {
    present: HashMap<String, HashSet<String>>,
}

impl AnnotationIndex {
    pub fn build<'a>(instances: impl IntoIterator<Item = &'a NerInstance>) -> Self {
        let mut present: HashMap<String, HashSet<String>> = HashMap::new();
        for inst in instances {
            if !inst.gold_entities.is_empty() {
                present
                    .entry(inst.text.clone())
                    .or_default()
                    .insert(label_key(&inst.entity_type));
            }
        }
        AnnotationIndex { present }
    }

    pub fn has_mentions(&self, text: &str, entity_type: &str) -> bool {
        self.present
            .get(text)
            .is_some_and(|types| types.contains(&label_key(entity_type)))
    }
}

/// Re-targets `instance` at an entity type with no gold mentions in its text.
/// The new type is drawn uniformly from `label_set` minus the instance's own
/// type and every type annotated on the same text.
pub fn make_ner_negative<R: Rng + ?Sized>(
    instance: &NerInstance,
    label_set: &[&str],
    index: &AnnotationIndex,
    rng: &mut R,
) -> Result<NerInstance, NegError> {
    let own = label_key(&instance.entity_type);
    let mut seen = HashSet::new();
    let candidates: Vec<&str> = label_set
        .iter()
        .copied()
        .filter(|l| seen.insert(label_key(l)))
        .filter(|l| label_key(l) != own && !index.has_mentions(&instance.text, l))
        .collect();
    if candidates.is_empty() {
        return Err(NegError::NoAbsentType {
            id: instance.id.clone(),
        });
    }
    let chosen = candidates[rng.random_range(0..candidates.len())];
    Ok(NerInstance {
        id: format!("{}-neg-{}", instance.id, chosen.replace(' ', "_")),
        text: instance.text.clone(),
        entity_type: chosen.to_string(),
        gold_entities: Vec::new(),
        source_dataset: instance.source_dataset,
        is_negative: true,
    })
}

/// Builds an out-of-domain QA instance whose gold answer is the refusal text.
pub fn make_qa_negative(question: &str, policy: &NegativePolicy) -> Result<QaInstance, NegError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(NegError::EmptyQuestion);
    }
    Ok(QaInstance {
        id: format!("ood-{:016x}", fnv1a64(question.as_bytes())),
        question: question.to_string(),
        reference_answer: policy.refusal_text.clone(),
        domain: QaDomain::OutOfDomain,
        in_domain: false,
    })
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub instances: Vec<TaskInstance>,
    pub injected: usize,
    pub skipped: usize,
}

/// Adds `round(ratio * n)` negatives to a homogeneous NER or QA list.
///
/// Positives keep their relative order and are untouched; negatives are
/// spliced in at seeded positions. NER negatives are derived from distinct
/// base instances; a base with no absent type is skipped and counted. For NER,
/// `label_set` overrides each instance's own source label set.
pub fn inject(
    instances: &[TaskInstance],
    policy: &NegativePolicy,
    label_set: Option<&[&str]>,
) -> Result<Injection, NegError> {
    let Some(first) = instances.first() else {
        return Ok(Injection {
            instances: Vec::new(),
            injected: 0,
            skipped: 0,
        });
    };
    let task = first.task();
    if !matches!(task, Task::Ner | Task::Qa) {
        return Err(NegError::UnsupportedTask(task));
    }
    if instances.iter().any(|i| i.task() != task) {
        return Err(NegError::MixedTasks);
    }
    let n = instances.len();
    let k = policy.target_count(n);
    if k == 0 {
        return Ok(Injection {
            instances: instances.to_vec(),
            injected: 0,
            skipped: 0,
        });
    }

    let mut negatives = Vec::with_capacity(k);
    let mut skipped = 0;
    if task == Task::Ner {
        let ner: Vec<&NerInstance> = instances
            .iter()
            .filter_map(|i| match i {
                TaskInstance::Ner(n) => Some(n),
                _ => None,
            })
            .collect();
        let index = AnnotationIndex::build(ner.iter().copied());
        let mut bases: Vec<usize> = (0..n).collect();
        fisher_yates(&mut bases, &mut rng_for_stream(policy.seed, BASE_STREAM));
        for (j, &b) in bases.iter().take(k).enumerate() {
            let base = ner[b];
            let labels = label_set.unwrap_or_else(|| base.source_dataset.label_set());
            let mut rng = rng_for_stream(policy.seed, j as u64);
            match make_ner_negative(base, labels, &index, &mut rng) {
                Ok(neg) => negatives.push(TaskInstance::Ner(neg)),
                Err(e) => {
                    log::warn!("skipping negative: {e}");
                    skipped += 1;
                }
            }
        }
    } else {
        let mut order: Vec<usize> = (0..policy.questions.len()).collect();
        fisher_yates(&mut order, &mut rng_for_stream(policy.seed, QUESTION_STREAM));
        for j in 0..k {
            let pass = j / order.len();
            let question = &policy.questions[order[j % order.len()]];
            let mut neg = make_qa_negative(question, policy)?;
            if pass > 0 {
                neg.id = format!("{}-{}", neg.id, pass);
            }
            negatives.push(TaskInstance::Qa(neg));
        }
    }

    let injected = negatives.len();
    let mut slots: Vec<bool> = std::iter::repeat_n(false, n)
        .chain(std::iter::repeat_n(true, injected))
        .collect();
    fisher_yates(&mut slots, &mut rng_for_stream(policy.seed, POSITION_STREAM));
    let mut pos = instances.iter();
    let mut neg = negatives.into_iter();
    let merged = slots
        .into_iter()
        .map(|is_neg| {
            if is_neg {
                neg.next().expect("slot count matches negatives")
            } else {
                pos.next().expect("slot count matches positives").clone()
            }
        })
        .collect();
    Ok(Injection {
        instances: merged,
        injected,
        skipped,
    })
}
