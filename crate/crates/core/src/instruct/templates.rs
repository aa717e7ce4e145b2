//! Prompt templates, one per task.

use crate::corpus::Task;

pub const SYSTEM_PREAMBLE: &str = "You work with software developers from software industries.";

pub const NER_INSTRUCTION: &str = "Assume that you are a named entity recognizer. You will be given text, entity type as inputs and you have to extract possible entities of given entity type from the text.";

pub const LP_INSTRUCTION: &str = "Assume that you are a software question relevance checker. You will be given two questions as inputs and you have to identify whether two questions are relevant or not. Use 0 for non-relevant and 1 for relevant.";

pub const QA_INSTRUCTION: &str = "Assume that you are a helpful software community question answering expert. You will be given a question as inputs and you have to provide the answer. Your answer should be very crisp and clear. If you don't know the answer, do not try to make up the answer.";

pub const FAR_INSTRUCTION: &str = "Assume that you are an answer ranker in a community question answering portal. Given the question, rank the following answers based on their relevance from most relevant (1) to least relevant (0). If an answer is completely irrelevant, it should be ranked last. Strictly follow the Output Format: \"OPTION [answer number]: Rank [ranking number]\". DO NOT include any other additional text.";

// No published prompt exists for relation extraction; this one follows the
// phrasing of the others and enumerates the label set.
pub const RE_INSTRUCTION: &str = "Assume that you are a relation extractor. You will be given text and two entities as inputs and you have to identify the relation between the two entities. Answer with exactly one of the following relation types: dependency, conflict, affected version, cause and effect, interaction/control.";

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Ner => "Named Entity Recognition",
        Task::Re => "Relation Extraction",
        Task::Lp => "Link prediction",
        Task::Far => "Forum Answer Ranking",
        Task::Qa => "Community Question Answering",
    }
}

pub fn instruction_for(task: Task) -> &'static str {
    match task {
        Task::Ner => NER_INSTRUCTION,
        Task::Re => RE_INSTRUCTION,
        Task::Lp => LP_INSTRUCTION,
        Task::Far => FAR_INSTRUCTION,
        Task::Qa => QA_INSTRUCTION,
    }
}

/// `[INST]...[\INST]` system message for `task`.
pub fn render_system(task: Task) -> String {
    format!(
        "[INST]{} Your task is to {}.[\\INST]",
        SYSTEM_PREAMBLE,
        task_name(task)
    )
}

/// Recovers the task from a rendered system message.
pub fn task_from_system(system: &str) -> Option<Task> {
    Task::ALL.into_iter().find(|t| render_system(*t) == system)
}
