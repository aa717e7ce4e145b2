//! Deterministic fact-overlap proxy for free-text answers.
//!
//! A "fact unit" is a bigram of adjacent content words: text is lowercased,
//! split on whitespace, stripped of non-alphanumeric characters, and filtered
//! against [`STOP_WORDS`]. The score is the F1 of the two bigram multisets,
//! falling back to content-unigram F1 when either side has fewer than two
//! content words. It stands in for model-based fact extraction and is labeled
//! `fact_overlap(proxy)` in reports.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

/// Stop words, written without apostrophes (tokens are stripped the same way).
pub const STOP_WORDS: [&str; 150] = [
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an",
    "and", "any", "are", "arent", "as", "at", "be", "because", "been", "before",
    "being", "below", "between", "both", "but", "by", "can", "cant", "could", "couldnt",
    "did", "didnt", "do", "does", "doesnt", "doing", "dont", "down", "during", "each",
    "either", "else", "etc", "even", "ever", "every", "few", "for", "from", "further",
    "had", "hadnt", "has", "hasnt", "have", "havent", "having", "he", "her", "here",
    "hers", "herself", "him", "himself", "his", "how", "i", "if", "im", "in",
    "into", "is", "isnt", "it", "its", "itself", "ive", "just", "let", "lets",
    "may", "me", "might", "more", "most", "much", "must", "my", "myself", "neither",
    "no", "nor", "not", "of", "off", "on", "once", "only", "or", "other",
    "ought", "our", "ours", "ourselves", "out", "over", "own", "same", "shall", "she",
    "should", "shouldnt", "so", "some", "such", "than", "that", "the", "their", "theirs",
    "them", "themselves", "then", "there", "these", "they", "this", "those", "through", "to",
    "too", "under", "until", "up", "very", "was", "wasnt", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
];

static STOP_SET: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| STOP_WORDS.iter().copied().collect());

pub fn content_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|tok| tok.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
        .filter(|tok| !tok.is_empty() && !STOP_SET.contains(tok.as_str()))
        .collect()
}

fn bigrams(words: &[String]) -> Vec<String> {
    words.windows(2).map(|w| format!("{} {}", w[0], w[1])).collect()
}

fn multiset_f1(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for x in a {
        counts.entry(x).or_default().0 += 1;
    }
    for x in b {
        counts.entry(x).or_default().1 += 1;
    }
    let overlap: usize = counts.values().map(|&(ca, cb)| ca.min(cb)).sum();
    2.0 * overlap as f64 / (a.len() + b.len()) as f64
}

/// Fact-overlap F1 in `[0, 1]`; symmetric in its arguments.
pub fn fact_overlap(reference: &str, generated: &str) -> f64 {
    if generated.trim().is_empty() || reference.trim().is_empty() {
        return 0.0;
    }
    let r = content_words(reference);
    let g = content_words(generated);
    if r.is_empty() && g.is_empty() {
        // Nothing but stop words on both sides: only an exact match counts.
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        return if norm(reference) == norm(generated) { 1.0 } else { 0.0 };
    }
    if r.len() < 2 || g.len() < 2 {
        multiset_f1(&r, &g)
    } else {
        multiset_f1(&bigrams(&r), &bigrams(&g))
    }
}
