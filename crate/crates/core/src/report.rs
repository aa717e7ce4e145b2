//! Score files and the three comparison tables (CSV and Markdown).
//!
//! Table 1 holds macro-F1 for NER (DistALANER, StackOverflow, GitHub,
//! WikiSER), RE (DistALARE) and LP (BLANCA-L); Table 2 holds FAR MRR
//! (BLANCA-R); Table 3 holds QA fact overlap (ServerFault, askUbuntu,
//! Android). Rows are models in first-seen order. Datasets outside the fixed
//! columns are appended to their task's table. Missing cells render as "—".

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Task;
use crate::metrics::{MetricReport, ScoreName};

pub const ABSENT: &str = "—";

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// Scores of one model on one dataset, per split plus the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub model: String,
    pub dataset: String,
    pub task: Task,
    pub score_name: ScoreName,
    pub splits: Vec<MetricReport>,
    pub mean: f64,
}

impl ScoreFile {
    pub fn from_splits(
        model: impl Into<String>,
        dataset: impl Into<String>,
        splits: Vec<MetricReport>,
    ) -> Result<Self, ReportError> {
        let first = splits
            .first()
            .ok_or_else(|| ReportError::SchemaMismatch("no split scores".into()))?;
        let (task, score_name) = (first.task, first.score_name);
        if splits.iter().any(|s| s.task != task || s.score_name != score_name) {
            return Err(ReportError::SchemaMismatch(
                "splits disagree on task or metric".into(),
            ));
        }
        let mean = splits.iter().map(|s| s.score).sum::<f64>() / splits.len() as f64;
        Ok(ScoreFile {
            model: model.into(),
            dataset: dataset.into(),
            task,
            score_name,
            splits,
            mean,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.splits.iter().map(|s| s.n_instances).sum()
    }

    pub fn n_unparseable(&self) -> usize {
        self.splits.iter().map(|s| s.n_unparseable).sum()
    }
}

struct Layout {
    title: &'static str,
    tasks: &'static [Task],
    columns: &'static [(Task, &'static str)],
}

const LAYOUTS: [Layout; 3] = [
    Layout {
        title: "Table 1. NER, RE and LP (macro F1)",
        tasks: &[Task::Ner, Task::Re, Task::Lp],
        columns: &[
            (Task::Ner, "DistALANER"),
            (Task::Ner, "StackOverflow"),
            (Task::Ner, "GitHub"),
            (Task::Ner, "WikiSER"),
            (Task::Re, "DistALARE"),
            (Task::Lp, "BLANCA-L"),
        ],
    },
    Layout {
        title: "Table 2. FAR (MRR)",
        tasks: &[Task::Far],
        columns: &[(Task::Far, "BLANCA-R")],
    },
    Layout {
        title: "Table 3. QA (fact_overlap(proxy))",
        tasks: &[Task::Qa],
        columns: &[
            (Task::Qa, "ServerFault"),
            (Task::Qa, "askUbuntu"),
            (Task::Qa, "Android"),
        ],
    },
];

fn task_group(task: Task) -> &'static str {
    match task {
        Task::Ner => "NER",
        Task::Re => "RE",
        Task::Lp => "LP",
        Task::Far => "FAR",
        Task::Qa => "QA",
    }
}

fn escape(cell: &str) -> String {
    cell.replace('|', "\\|")
}

/// Renders every table that has at least one score.
pub fn render_markdown(scores: &[ScoreFile]) -> Result<String, ReportError> {
    if scores.is_empty() {
        return Err(ReportError::SchemaMismatch("no score files".into()));
    }
    let mut models: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(String, Task, String), f64> = BTreeMap::new();
    for s in scores {
        if s.score_name != ScoreName::for_task(s.task) {
            return Err(ReportError::SchemaMismatch(format!(
                "{} on {}: metric {} does not belong to task {}",
                s.model, s.dataset, s.score_name, s.task
            )));
        }
        if !models.contains(&s.model.as_str()) {
            models.push(&s.model);
        }
        let key = (s.model.clone(), s.task, s.dataset.to_lowercase());
        if cells.insert(key, s.mean).is_some() {
            return Err(ReportError::SchemaMismatch(format!(
                "duplicate score for {} on {}",
                s.model, s.dataset
            )));
        }
    }

    let mut out = String::new();
    for layout in &LAYOUTS {
        if !scores.iter().any(|s| layout.tasks.contains(&s.task)) {
            continue;
        }
        let mut columns: Vec<(Task, String)> = layout
            .columns
            .iter()
            .map(|(t, name)| (*t, name.to_string()))
            .collect();
        for s in scores.iter().filter(|s| layout.tasks.contains(&s.task)) {
            let known = columns
                .iter()
                .any(|(t, n)| *t == s.task && n.eq_ignore_ascii_case(&s.dataset));
            if !known {
                let at = columns
                    .iter()
                    .rposition(|(t, _)| *t == s.task)
                    .map_or(columns.len(), |i| i + 1);
                columns.insert(at, (s.task, s.dataset.clone()));
            }
        }

        out.push_str(&format!("### {}\n\n", layout.title));
        let groups: Vec<String> = layout
            .tasks
            .iter()
            .map(|t| {
                let names: Vec<&str> = columns
                    .iter()
                    .filter(|(ct, _)| ct == t)
                    .map(|(_, n)| n.as_str())
                    .collect();
                format!("{}: {}", task_group(*t), names.join(", "))
            })
            .collect();
        out.push_str(&format!("Columns: {}\n\n", groups.join("; ")));
        out.push_str("| Models |");
        for (_, name) in &columns {
            out.push_str(&format!(" {} |", escape(name)));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(columns.len()));
        out.push('\n');
        for model in &models {
            out.push_str(&format!("| {} |", escape(model)));
            for (task, name) in &columns {
                let key = (model.to_string(), *task, name.to_lowercase());
                match cells.get(&key) {
                    Some(v) => out.push_str(&format!(" {v:.3} |")),
                    None => out.push_str(&format!(" {ABSENT} |")),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    model: &'a str,
    task: Task,
    dataset: &'a str,
    metric: String,
    split: String,
    score: String,
    n_instances: usize,
    n_unparseable: usize,
}

/// Long-format CSV: one row per split plus a `mean` row per score file.
pub fn render_csv(scores: &[ScoreFile]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ReportError::SchemaMismatch(e.to_string());
    for s in scores {
        for (i, split) in s.splits.iter().enumerate() {
            w.serialize(CsvRow {
                model: &s.model,
                task: s.task,
                dataset: &s.dataset,
                metric: s.score_name.to_string(),
                split: (i + 1).to_string(),
                score: format!("{:.6}", split.score),
                n_instances: split.n_instances,
                n_unparseable: split.n_unparseable,
            })
            .map_err(csv_err)?;
        }
        w.serialize(CsvRow {
            model: &s.model,
            task: s.task,
            dataset: &s.dataset,
            metric: s.score_name.to_string(),
            split: "mean".into(),
            score: format!("{:.6}", s.mean),
            n_instances: s.n_instances(),
            n_unparseable: s.n_unparseable(),
        })
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ReportError::SchemaMismatch(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-split breakdown for a single score file.
pub fn render_split_markdown(score: &ScoreFile) -> String {
    let mut out = format!(
        "| Split | {} | Instances | Unparseable |\n|---|---|---|---|\n",
        score.score_name
    );
    for (i, s) in score.splits.iter().enumerate() {
        out.push_str(&format!(
            "| {} | {:.3} | {} | {} |\n",
            i + 1,
            s.score,
            s.n_instances,
            s.n_unparseable
        ));
    }
    out.push_str(&format!(
        "| mean | {:.3} | {} | {} |\n",
        score.mean,
        score.n_instances(),
        score.n_unparseable()
    ));
    out
}
