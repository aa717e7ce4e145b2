//! Instruction records: prompt rendering, dataset mixing and training artifacts.
//!
//! Inputs are packed with fixed field labels:
//!
//! | task | input layout |
//! | ---- | ------------ |
//! | NER  | `Text: ...` / `Entity type: ...` |
//! | RE   | `Text: ...` / `Entity 1: ...` / `Entity 2: ...` |
//! | LP   | `Question 1: ...` / `Question 2: ...` |
//! | FAR  | `Question: ...` then `OPTION i: <answer>` per answer |
//! | QA   | `Question: ...` |

mod mix;
pub mod templates;

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, WriteSummary};
use crate::corpus::{bit, validate_instance, CorpusError, FarInstance, Task, TaskInstance};
use crate::negsample::NegError;
use crate::parse::{format_ranking, serialize_entities};

pub use mix::{mix, DatasetContribution, MixOutcome, MixSpec, DEFAULT_PER_DATASET_CAP};
pub use templates::{instruction_for, render_system, task_name};

#[derive(Debug, Error)]
pub enum InstructError {
    #[error("invalid instance `{id}`: {}", violations.join("; "))]
    InvalidInstance { id: String, violations: Vec<String> },
    #[error("invalid mix spec: {0}")]
    InvalidSpec(String),
    #[error("dataset `{name}`: {source}")]
    Corpus {
        name: String,
        #[source]
        source: CorpusError,
    },
    #[error("dataset `{name}`: {source}")]
    Negative {
        name: String,
        #[source]
        source: NegError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> InstructError + '_ {
    move |source| InstructError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One prompt with its gold answer. Field order is the JSONL field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub system: String,
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub task: Task,
    pub source_dataset: String,
    #[serde(with = "bit")]
    pub is_negative: bool,
    pub id: String,
}

impl InstructionRecord {
    /// The user turn sent to a chat endpoint.
    pub fn user_message(&self) -> String {
        format!("{}\n\n{}", self.instruction, self.input)
    }
}

/// Gold ranking for FAR: the best answer gets rank 1, the rest keep input
/// order for ranks 2..n.
pub fn gold_ranking(far: &FarInstance) -> Vec<u32> {
    let mut next = 2;
    (0..far.answers.len())
        .map(|i| {
            if i == far.best_index {
                1
            } else {
                next += 1;
                next - 1
            }
        })
        .collect()
}

/// Packed input text for an instance.
pub fn render_input(instance: &TaskInstance) -> String {
    match instance {
        TaskInstance::Ner(n) => format!("Text: {}\nEntity type: {}", n.text, n.entity_type),
        TaskInstance::Re(r) => format!(
            "Text: {}\nEntity 1: {}\nEntity 2: {}",
            r.text, r.head_entity, r.tail_entity
        ),
        TaskInstance::Lp(l) => format!(
            "Question 1: {}\nQuestion 2: {}",
            l.question_a, l.question_b
        ),
        TaskInstance::Far(f) => {
            let mut s = format!("Question: {}", f.question);
            for (i, a) in f.answers.iter().enumerate() {
                s.push_str(&format!("\nOPTION {}: {}", i + 1, a));
            }
            s
        }
        TaskInstance::Qa(q) => format!("Question: {}", q.question),
    }
}

/// Gold output serialization.
pub fn render_output(instance: &TaskInstance) -> String {
    match instance {
        TaskInstance::Ner(n) => serialize_entities(&n.gold_entities),
        TaskInstance::Re(r) => r.gold_relation.clone(),
        TaskInstance::Lp(l) => if l.label { "1" } else { "0" }.to_string(),
        TaskInstance::Far(f) => format_ranking(&gold_ranking(f)),
        TaskInstance::Qa(q) => q.reference_answer.clone(),
    }
}

pub fn render_instruction(
    instance: &TaskInstance,
    source_dataset: &str,
) -> Result<InstructionRecord, InstructError> {
    let violations = validate_instance(instance);
    if !violations.is_empty() {
        return Err(InstructError::InvalidInstance {
            id: instance.id().to_string(),
            violations,
        });
    }
    let task = instance.task();
    Ok(InstructionRecord {
        system: render_system(task),
        instruction: instruction_for(task).to_string(),
        input: render_input(instance),
        output: render_output(instance),
        task,
        source_dataset: source_dataset.to_string(),
        is_negative: instance.is_negative(),
        id: instance.id().to_string(),
    })
}

/// Writes one JSON object per record, LF terminated.
pub fn emit_jsonl(records: &[InstructionRecord], path: &Path) -> Result<WriteSummary, InstructError> {
    artifact::write_json_lines(path, records).map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<InstructionRecord>, InstructError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| InstructError::MalformedRecord {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Fine-tuning hyperparameters, in emission order.
pub const TRAINING_CONFIG: [(&str, &str); 10] = [
    ("learning_rate", "2e-4"),
    ("max_sequence_length", "4096"),
    ("lora_alpha", "16"),
    ("precision", "fp16"),
    ("epochs", "3"),
    ("optimizer", "paged_adamw_32bit"),
    ("warmup_ratio", "0.03"),
    ("lr_scheduler", "cosine"),
    ("per_device_train_batch", "8"),
    ("trainer", "SFTT"),
];

pub fn training_config_text() -> String {
    TRAINING_CONFIG
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

pub fn emit_training_config(path: &Path) -> Result<WriteSummary, InstructError> {
    artifact::write_bytes(path, training_config_text().as_bytes(), TRAINING_CONFIG.len())
        .map_err(io_err(path))
}
