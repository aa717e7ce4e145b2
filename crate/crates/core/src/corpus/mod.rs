//! Canonical data model for the five tasks, corpus ingestion and evaluation splits.
//!
//! Every corpus is a local file. The canonical format is JSONL with one schema
//! per task:
//!
//! | task | fields |
//! | ---- | ------ |
//! | NER  | `id`, `text`, `entity_type`, `entities`, `source` |
//! | RE   | `id`, `text`, `head`, `tail`, `relation` |
//! | LP   | `id`, `q1`, `q2`, `label` |
//! | FAR  | `id`, `question`, `answers`, `best_index` |
//! | QA   | `id`, `question`, `answer`, `domain`, `in_domain` |
//!
//! NER corpora may also be read from CoNLL (`token<TAB>tag`, BIO tags, blank
//! line between sentences); see [`conll`].

pub mod conll;
pub mod labels;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use labels::{normalize_entity, SourceDataset, RELATION_LABELS};
pub use split::split_sample;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: unknown label `{value}` (allowed: {})", allowed.join(", "))]
    UnknownLabel {
        line: usize,
        value: String,
        allowed: Vec<String>,
    },
    #[error("dataset {0} contains no records")]
    EmptyDataset(String),
    #[error("need at least {needed} instances, found {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("invalid manifest `{name}`: {reason}")]
    InvalidManifest { name: String, reason: String },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The five supported tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ner,
    Re,
    Lp,
    Far,
    Qa,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Ner, Task::Re, Task::Lp, Task::Far, Task::Qa];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ner => "ner",
            Task::Re => "re",
            Task::Lp => "lp",
            Task::Far => "far",
            Task::Qa => "qa",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == key)
            .ok_or_else(|| format!("unknown task `{s}` (expected one of ner, re, lp, far, qa)"))
    }
}

/// Serializes a `bool` as the integer 0/1; accepts integers or booleans.
pub(crate) mod bit {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(value: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        struct BitVisitor;

        impl Visitor<'_> for BitVisitor {
            type Value = bool;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("0, 1, true or false")
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<bool, E> {
                Ok(v)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<bool, E> {
                match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(E::custom(format!("bit must be 0 or 1, got {other}"))),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<bool, E> {
                match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(E::custom(format!("bit must be 0 or 1, got {other}"))),
                }
            }
        }

        d.deserialize_any(BitVisitor)
    }

    pub fn is_false(v: &bool) -> bool {
        !*v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerInstance {
    pub id: String,
    pub text: String,
    pub entity_type: String,
    #[serde(rename = "entities")]
    pub gold_entities: Vec<String>,
    #[serde(rename = "source")]
    pub source_dataset: SourceDataset,
    /// Set on instances produced by negative sampling.
    #[serde(
        default,
        rename = "negative",
        with = "bit",
        skip_serializing_if = "bit::is_false"
    )]
    pub is_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReInstance {
    pub id: String,
    pub text: String,
    #[serde(rename = "head")]
    pub head_entity: String,
    #[serde(rename = "tail")]
    pub tail_entity: String,
    #[serde(rename = "relation")]
    pub gold_relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpInstance {
    pub id: String,
    #[serde(rename = "q1")]
    pub question_a: String,
    #[serde(rename = "q2")]
    pub question_b: String,
    /// `true` when the two questions are related.
    #[serde(with = "bit")]
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FarInstance {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub best_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QaDomain {
    ServerFault,
    AskUbuntu,
    Android,
    OutOfDomain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub reference_answer: String,
    pub domain: QaDomain,
    #[serde(with = "bit")]
    pub in_domain: bool,
}

/// One corpus record of any task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum TaskInstance {
    Ner(NerInstance),
    Re(ReInstance),
    Lp(LpInstance),
    Far(FarInstance),
    Qa(QaInstance),
}

impl TaskInstance {
    pub fn id(&self) -> &str {
        match self {
            TaskInstance::Ner(i) => &i.id,
            TaskInstance::Re(i) => &i.id,
            TaskInstance::Lp(i) => &i.id,
            TaskInstance::Far(i) => &i.id,
            TaskInstance::Qa(i) => &i.id,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TaskInstance::Ner(_) => Task::Ner,
            TaskInstance::Re(_) => Task::Re,
            TaskInstance::Lp(_) => Task::Lp,
            TaskInstance::Far(_) => Task::Far,
            TaskInstance::Qa(_) => Task::Qa,
        }
    }

    /// True for instances whose gold output is "nothing": NER queries for an
    /// absent type and out-of-domain questions.
    pub fn is_negative(&self) -> bool {
        match self {
            TaskInstance::Ner(i) => i.is_negative,
            TaskInstance::Qa(i) => !i.in_domain,
            _ => false,
        }
    }

    /// Parses one canonical JSONL line for `task`.
    pub fn from_json(task: Task, line: &str) -> Result<TaskInstance, serde_json::Error> {
        Ok(match task {
            Task::Ner => TaskInstance::Ner(serde_json::from_str(line)?),
            Task::Re => TaskInstance::Re(serde_json::from_str(line)?),
            Task::Lp => TaskInstance::Lp(serde_json::from_str(line)?),
            Task::Far => TaskInstance::Far(serde_json::from_str(line)?),
            Task::Qa => TaskInstance::Qa(serde_json::from_str(line)?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serialization is infallible")
    }
}

/// Types that carry a record id.
pub trait HasId {
    fn id(&self) -> &str;
}

impl HasId for TaskInstance {
    fn id(&self) -> &str {
        TaskInstance::id(self)
    }
}

impl HasId for NerInstance {
    fn id(&self) -> &str {
        &self.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    Conll,
}

/// Where a dataset lives and how to read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task: Task,
    pub path: PathBuf,
    #[serde(default)]
    pub format: CorpusFormat,
    /// Expected record count; a mismatch is only a warning.
    #[serde(default)]
    pub declared_count: Option<u64>,
    /// NER source for CoNLL input; JSONL records carry their own.
    #[serde(default)]
    pub source: Option<SourceDataset>,
}

impl DatasetManifest {
    pub fn jsonl(name: impl Into<String>, task: Task, path: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            name: name.into(),
            task,
            path: path.into(),
            format: CorpusFormat::Jsonl,
            declared_count: None,
            source: None,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> CorpusError {
        CorpusError::InvalidManifest {
            name: self.name.clone(),
            reason: reason.into(),
        }
    }

    /// The NER source for this manifest: explicit, or inferred from the name.
    pub fn ner_source(&self) -> Option<SourceDataset> {
        self.source.or_else(|| self.name.parse().ok())
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub instances: Vec<TaskInstance>,
    pub warnings: Vec<String>,
}

/// Reads and validates the dataset described by `manifest`.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<LoadedDataset, CorpusError> {
    let raw = fs::read_to_string(&manifest.path).map_err(|e| CorpusError::io(&manifest.path, e))?;
    let instances = match manifest.format {
        CorpusFormat::Conll => {
            if manifest.task != Task::Ner {
                return Err(manifest.invalid("format=conll is only valid for task=ner"));
            }
            let source = manifest
                .ner_source()
                .ok_or_else(|| manifest.invalid("CoNLL input needs a `source` NER dataset"))?;
            conll::read_conll(&raw, &manifest.name, source)?
                .into_iter()
                .map(TaskInstance::Ner)
                .collect()
        }
        CorpusFormat::Jsonl => parse_jsonl(manifest.task, &raw)?,
    };

    if instances.is_empty() {
        return Err(CorpusError::EmptyDataset(manifest.name.clone()));
    }

    let mut warnings = Vec::new();
    if let Some(declared) = manifest.declared_count {
        if declared != instances.len() as u64 {
            let msg = format!(
                "{}: declared {} records, found {}",
                manifest.name,
                declared,
                instances.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(LoadedDataset {
        instances,
        warnings,
    })
}

/// Parses canonical JSONL text. Line numbers in errors are 1-based.
pub fn parse_jsonl(task: Task, raw: &str) -> Result<Vec<TaskInstance>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut instance =
            TaskInstance::from_json(task, line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        canonicalize_labels(&mut instance, line_no)?;
        let violations = validate_instance(&instance);
        if !violations.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                reason: violations.join("; "),
            });
        }
        out.push(instance);
    }
    Ok(out)
}

fn canonicalize_labels(instance: &mut TaskInstance, line: usize) -> Result<(), CorpusError> {
    match instance {
        TaskInstance::Ner(ner) => {
            let source = ner.source_dataset;
            let canonical =
                source
                    .canonical_label(&ner.entity_type)
                    .ok_or_else(|| CorpusError::UnknownLabel {
                        line,
                        value: ner.entity_type.clone(),
                        allowed: source.label_set().iter().map(|s| s.to_string()).collect(),
                    })?;
            ner.entity_type = canonical.to_string();
        }
        TaskInstance::Re(re) => {
            let canonical = labels::canonical_in(&RELATION_LABELS, &re.gold_relation)
                .ok_or_else(|| CorpusError::UnknownLabel {
                    line,
                    value: re.gold_relation.clone(),
                    allowed: RELATION_LABELS.iter().map(|s| s.to_string()).collect(),
                })?;
            re.gold_relation = canonical.to_string();
        }
        _ => {}
    }
    Ok(())
}

/// Writes instances as canonical JSONL.
pub fn write_jsonl(instances: &[TaskInstance], path: &Path) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for inst in instances {
        buf.extend_from_slice(inst.to_json().as_bytes());
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    file.write_all(&buf).map_err(|e| CorpusError::io(path, e))
}

/// Lists every violated type invariant; empty when the instance is valid.
pub fn validate_instance(instance: &TaskInstance) -> Vec<String> {
    let mut v = Vec::new();
    match instance {
        TaskInstance::Ner(ner) => {
            if ner.text.trim().is_empty() {
                v.push("text: must be non-empty".to_string());
            }
            if ner.source_dataset.canonical_label(&ner.entity_type).is_none() {
                v.push(format!(
                    "entity_type: `{}` is not a {} label",
                    ner.entity_type, ner.source_dataset
                ));
            }
            let mut seen = HashSet::new();
            for e in &ner.gold_entities {
                if !seen.insert(normalize_entity(e)) {
                    v.push(format!("gold_entities: duplicate entity `{e}`"));
                }
            }
            if ner.is_negative && !ner.gold_entities.is_empty() {
                v.push("gold_entities: negative instance must have no entities".to_string());
            }
        }
        TaskInstance::Re(re) => {
            if re.text.trim().is_empty() {
                v.push("text: must be non-empty".to_string());
            }
            if labels::canonical_in(&RELATION_LABELS, &re.gold_relation).is_none() {
                v.push(format!(
                    "gold_relation: unknown relation label `{}`",
                    re.gold_relation
                ));
            }
            if re.head_entity == re.tail_entity {
                v.push("head_entity: must differ from tail_entity".to_string());
            }
        }
        TaskInstance::Lp(lp) => {
            if lp.question_a.trim().is_empty() {
                v.push("question_a: must be non-empty".to_string());
            }
            if lp.question_b.trim().is_empty() {
                v.push("question_b: must be non-empty".to_string());
            }
        }
        TaskInstance::Far(far) => {
            if far.answers.len() < 3 {
                v.push(format!("answers length {} < 3", far.answers.len()));
            }
            if far.best_index >= far.answers.len() {
                v.push(format!(
                    "best_index {} out of range for {} answers",
                    far.best_index,
                    far.answers.len()
                ));
            }
        }
        TaskInstance::Qa(qa) => {
            if qa.question.trim().is_empty() {
                v.push("question: must be non-empty".to_string());
            }
            let ood = qa.domain == QaDomain::OutOfDomain;
            if qa.in_domain == ood {
                v.push("in_domain: must be 0 exactly when domain is OutOfDomain".to_string());
            }
            if qa.in_domain && qa.reference_answer.trim().is_empty() {
                v.push("reference_answer: must be non-empty for in-domain questions".to_string());
            }
        }
    }
    v
}
