//! CoNLL reader for NER corpora.
//!
//! Each sentence is pivoted into one [`NerInstance`] per entity type that has
//! at least one mention in the sentence. Types absent from a sentence only
//! appear through negative sampling.

use std::collections::{BTreeMap, HashSet};

use super::labels::{normalize_entity, SourceDataset};
use super::{CorpusError, NerInstance};

#[derive(Debug, Clone, PartialEq, Eq)]
struct Token {
    text: String,
    tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tag {
    Outside,
    Begin(&'static str),
    Inside(&'static str),
}

fn parse_tag(raw: &str, source: SourceDataset, line: usize) -> Result<Tag, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRecord { line, reason };
    if raw == "O" {
        return Ok(Tag::Outside);
    }
    let (prefix, label) = raw
        .split_once('-')
        .ok_or_else(|| malformed(format!("unknown BIO tag `{raw}`")))?;
    let canonical = source.canonical_label(label).ok_or_else(|| {
        malformed(format!(
            "unknown BIO tag `{raw}`: `{label}` is not a {source} entity type"
        ))
    })?;
    match prefix {
        "B" => Ok(Tag::Begin(canonical)),
        "I" => Ok(Tag::Inside(canonical)),
        _ => Err(malformed(format!("unknown BIO tag `{raw}`"))),
    }
}

fn split_line(line: &str) -> Option<(&str, &str)> {
    if let Some((tok, rest)) = line.split_once('\t') {
        let tag = rest.rsplit('\t').next()?.trim();
        return Some((tok, tag));
    }
    let mut cols = line.split_whitespace();
    let first = cols.next()?;
    let last = cols.last()?;
    Some((first, last))
}

/// Parses CoNLL text into pivoted NER instances. Ids have the form
/// `{dataset}-s{sentence}-{type}` with 1-based sentence numbers.
pub fn read_conll(
    raw: &str,
    dataset: &str,
    source: SourceDataset,
) -> Result<Vec<NerInstance>, CorpusError> {
    let mut sentences: Vec<Vec<Token>> = Vec::new();
    let mut current = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            continue;
        }
        let (tok, tag) = split_line(trimmed).ok_or_else(|| CorpusError::MalformedRecord {
            line: line_no,
            reason: "expected `token<TAB>tag`".to_string(),
        })?;
        current.push(Token {
            text: tok.to_string(),
            tag: parse_tag(tag, source, line_no)?,
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }

    let mut out = Vec::new();
    for (s_idx, sentence) in sentences.iter().enumerate() {
        let text = sentence
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let mut by_type: BTreeMap<&'static str, Vec<String>> = BTreeMap::new();
        for (label, mention) in spans(sentence) {
            by_type.entry(label).or_default().push(mention);
        }
        for (label, mentions) in by_type {
            let mut seen = HashSet::new();
            let gold: Vec<String> = mentions
                .into_iter()
                .filter(|m| seen.insert(normalize_entity(m)))
                .collect();
            out.push(NerInstance {
                id: format!("{}-s{}-{}", dataset, s_idx + 1, label.replace(' ', "_")),
                text: text.clone(),
                entity_type: label.to_string(),
                gold_entities: gold,
                source_dataset: source,
                is_negative: false,
            });
        }
    }
    Ok(out)
}

/// Extracts `(type, mention)` spans. An `I-` tag that does not continue a span
/// of the same type opens a new one (IOB1 leniency).
fn spans(sentence: &[Token]) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let mut open: Option<(&'static str, Vec<&str>)> = None;
    for tok in sentence {
        match tok.tag {
            Tag::Outside => {
                if let Some((l, words)) = open.take() {
                    out.push((l, words.join(" ")));
                }
            }
            Tag::Begin(label) => {
                if let Some((l, words)) = open.take() {
                    out.push((l, words.join(" ")));
                }
                open = Some((label, vec![tok.text.as_str()]));
            }
            Tag::Inside(label) => match &mut open {
                Some((l, words)) if *l == label => words.push(tok.text.as_str()),
                _ => {
                    if let Some((l, words)) = open.take() {
                        out.push((l, words.join(" ")));
                    }
                    open = Some((label, vec![tok.text.as_str()]));
                }
            },
        }
    }
    if let Some((l, words)) = open {
        out.push((l, words.join(" ")));
    }
    out
}
