//! Turning raw model completions into structured predictions.
//!
//! Extraction is lenient (prose around a payload, bullets, quotes and code
//! fences are tolerated) while validation is strict: a ranking must be a
//! bijection and a relation answer must name exactly one label. Anything that
//! fails validation becomes [`Prediction::Unparseable`] rather than a guess.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{labels::RELATION_LABELS, Task, TaskInstance};

/// Payloads with no list structure longer than this are rejected as entity lists.
pub const MAX_UNDELIMITED_ENTITY_CHARS: usize = 500;

/// Strings (case-insensitive, trimmed, optional trailing period) meaning "no entities".
pub const EMPTY_MARKERS: [&str; 5] = ["[]", "", "none", "no entities", "null"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Prediction {
    EntityList(Vec<String>),
    RelationLabel(String),
    Relevance(bool),
    /// `ranks[i]` is the rank given to option `i + 1`.
    Ranking(Vec<u32>),
    AnswerText(String),
    Unparseable { raw: String, reason: String },
}

impl Prediction {
    fn unparseable(raw: &str, reason: impl Into<String>) -> Self {
        Prediction::Unparseable {
            raw: raw.to_string(),
            reason: reason.into(),
        }
    }

    pub fn is_unparseable(&self) -> bool {
        matches!(self, Prediction::Unparseable { .. })
    }
}

/// One line of a predictions dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub task: Task,
    pub prediction: Prediction,
    pub raw: String,
}

/// Parses `raw` with the parser matching the instance's task.
pub fn parse_for_instance(instance: &TaskInstance, raw: &str) -> Prediction {
    match instance {
        TaskInstance::Ner(_) => parse_entities(raw),
        TaskInstance::Re(_) => parse_relation(raw, &RELATION_LABELS),
        TaskInstance::Lp(_) => parse_relevance(raw),
        TaskInstance::Far(far) => parse_ranking(raw, far.answers.len()),
        TaskInstance::Qa(_) => parse_answer(raw),
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_empty_marker(s: &str) -> bool {
    let t = s.trim();
    let t = t.strip_suffix('.').unwrap_or(t).trim().to_lowercase();
    EMPTY_MARKERS.contains(&t.as_str())
}

fn strip_code_fence(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let rest = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

static NUMBERED_BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\d+[.)]\s+").expect("valid regex"));

fn clean_item(item: &str) -> String {
    let mut s = item.trim();
    for bullet in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start();
            break;
        }
    }
    if let Some(m) = NUMBERED_BULLET.find(s) {
        s = &s[m.end()..];
    }
    let quotes: &[char] = &['"', '\'', '`', '“', '”', '‘', '’'];
    collapse_ws(s.trim_matches(quotes))
}

fn dedupe(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.to_lowercase()))
        .collect()
}

fn split_bare(body: &str) -> Vec<String> {
    body.split(['\n', ','])
        .map(clean_item)
        .filter(|s| !s.is_empty())
        .collect()
}

fn bracketed_list(body: &str) -> Option<Vec<String>> {
    let start = body.find('[')?;
    let end = body.rfind(']')?;
    if end <= start {
        return None;
    }
    let slice = &body[start..=end];
    if let Ok(values) = serde_json::from_str::<Vec<serde_json::Value>>(slice) {
        let items = values
            .into_iter()
            .filter_map(|v| match v {
                serde_json::Value::String(s) => Some(collapse_ws(&s)),
                serde_json::Value::Null => None,
                other => Some(other.to_string()),
            })
            .collect();
        return Some(items);
    }
    Some(split_bare(&slice[1..slice.len() - 1]))
}

/// Parses an entity list.
///
/// Accepted forms, in priority order: a JSON array of strings, a bracketed
/// comma list, a newline or comma separated bare list. Empty markers (`[]`,
/// `none`, `null`, `no entities`, blank) yield an empty list. Items are
/// whitespace-normalized and deduplicated case-insensitively, keeping the
/// first spelling.
pub fn parse_entities(raw: &str) -> Prediction {
    let body = strip_code_fence(raw.trim());
    if is_empty_marker(body) {
        return Prediction::EntityList(Vec::new());
    }
    if let Some(items) = bracketed_list(body) {
        return Prediction::EntityList(dedupe(items));
    }
    let has_structure = body.contains(['\n', ',']);
    if !has_structure && body.chars().count() > MAX_UNDELIMITED_ENTITY_CHARS {
        return Prediction::unparseable(raw, "no list structure in long free text");
    }
    let body = if body.ends_with('.') && !body.ends_with("..") {
        &body[..body.len() - 1]
    } else {
        body
    };
    Prediction::EntityList(dedupe(split_bare(body)))
}

/// Inverse of [`parse_entities`] for normalized, duplicate-free lists:
/// `"[]"` when empty, a comma-joined list when that is unambiguous, a JSON
/// array otherwise.
pub fn serialize_entities(entities: &[String]) -> String {
    if entities.is_empty() {
        return "[]".to_string();
    }
    let needs_json = entities.iter().any(|e| {
        e.contains([',', '\n', '\r', '[', ']', '"', '\'', '`', '“', '”', '‘', '’'])
            || e.ends_with('.')
            || clean_item(e) != *e
            || is_empty_marker(e)
            || e.chars().count() > MAX_UNDELIMITED_ENTITY_CHARS
    });
    if needs_json {
        serde_json::to_string(entities).expect("string list serializes")
    } else {
        entities.join(", ")
    }
}

static TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z0-9_]+(?:\.[0-9]+)*").expect("valid regex"));

/// Parses a link-prediction answer. The first standalone `0`/`1` token wins;
/// without one, "not relevant" / "non-relevant" / "irrelevant" mean 0 and
/// "relevant" means 1.
pub fn parse_relevance(raw: &str) -> Prediction {
    for m in TOKEN.find_iter(raw) {
        match m.as_str() {
            "0" => return Prediction::Relevance(false),
            "1" => return Prediction::Relevance(true),
            _ => {}
        }
    }
    let lower = collapse_ws(&raw.to_lowercase());
    let negative = ["not relevant", "non-relevant", "non relevant", "irrelevant"];
    if negative.iter().any(|n| lower.contains(n)) {
        Prediction::Relevance(false)
    } else if lower.contains("relevant") {
        Prediction::Relevance(true)
    } else {
        Prediction::unparseable(raw, "no relevance signal")
    }
}

static RANK_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)option\s*\[?\s*(\d+)\s*\]?\s*[:\-.)]?\s*rank\s*\[?\s*(\d+)\s*\]?")
        .expect("valid regex")
});

/// Parses `OPTION <i>: Rank <r>` lines into a ranking over `n_options` options.
pub fn parse_ranking(raw: &str, n_options: usize) -> Prediction {
    let mut ranks: Vec<Option<u32>> = vec![None; n_options];
    let mut found = false;
    for caps in RANK_LINE.captures_iter(raw) {
        found = true;
        let option = caps[1].parse::<usize>().unwrap_or(0);
        let rank = caps[2].parse::<usize>().unwrap_or(0);
        if option == 0 || option > n_options {
            return Prediction::unparseable(raw, format!("option {} out of range", &caps[1]));
        }
        if rank == 0 || rank > n_options {
            return Prediction::unparseable(raw, format!("rank {} out of range", &caps[2]));
        }
        let slot = &mut ranks[option - 1];
        match *slot {
            Some(prev) if prev as usize != rank => {
                return Prediction::unparseable(
                    raw,
                    format!("conflicting ranks for option {option}"),
                )
            }
            _ => *slot = Some(rank as u32),
        }
    }
    if !found {
        return Prediction::unparseable(raw, "no ranking lines");
    }
    let mut used = vec![false; n_options + 1];
    let mut out = Vec::with_capacity(n_options);
    for (i, r) in ranks.into_iter().enumerate() {
        let Some(r) = r else {
            return Prediction::unparseable(raw, format!("option {} not ranked", i + 1));
        };
        if std::mem::replace(&mut used[r as usize], true) {
            return Prediction::unparseable(raw, "duplicate rank");
        }
        out.push(r);
    }
    Prediction::Ranking(out)
}

/// Renders a ranking as template lines, one per option in option order.
pub fn format_ranking(ranks: &[u32]) -> String {
    ranks
        .iter()
        .enumerate()
        .map(|(i, r)| format!("OPTION {}: Rank {}", i + 1, r))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Finds the single relation label mentioned in `raw` (case-insensitive
/// substring match). A match nested inside a longer match is ignored, so
/// "affected version" beats "version". No label, or two distinct labels,
/// is unparseable.
pub fn parse_relation(raw: &str, label_set: &[&str]) -> Prediction {
    let lower = raw.to_lowercase();
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    for (li, label) in label_set.iter().enumerate() {
        let needle = label.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        for (start, m) in lower.match_indices(&needle) {
            spans.push((start, start + m.len(), li));
        }
    }
    let kept: Vec<usize> = spans
        .iter()
        .filter(|&&(s, e, _)| {
            !spans
                .iter()
                .any(|&(os, oe, _)| os <= s && e <= oe && (oe - os) > (e - s))
        })
        .map(|&(_, _, li)| li)
        .collect();
    let distinct: HashSet<usize> = kept.iter().copied().collect();
    match distinct.len() {
        0 => Prediction::unparseable(raw, "no relation label"),
        1 => Prediction::RelationLabel(label_set[kept[0]].to_string()),
        _ => Prediction::unparseable(raw, "ambiguous"),
    }
}

/// Free-text answers pass through trimmed; an empty completion is unparseable.
pub fn parse_answer(raw: &str) -> Prediction {
    let t = raw.trim();
    if t.is_empty() {
        Prediction::unparseable(raw, "empty completion")
    } else {
        Prediction::AnswerText(t.to_string())
    }
}
