mod common;

use devassist::corpus::RELATION_LABELS;
use devassist::parse::{
    format_ranking, parse_answer, parse_entities, parse_ranking, parse_relation, parse_relevance,
    serialize_entities, Prediction,
};
use proptest::prelude::*;

fn normalized_unique(items: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items
        .into_iter()
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.to_lowercase()))
        .collect()
}

proptest! {
    #[test]
    fn ranking_roundtrip(perm in (2usize..=8).prop_flat_map(|n| Just((1..=n as u32).collect::<Vec<_>>()).prop_shuffle())) {
        let n = perm.len();
        prop_assert_eq!(parse_ranking(&format_ranking(&perm), n), Prediction::Ranking(perm));
    }

    #[test]
    fn entity_roundtrip(raw in prop::collection::vec("[A-Za-z0-9][A-Za-z0-9 ._+#,'\"\\[\\]-]{0,15}", 0..6)) {
        let items = normalized_unique(raw);
        let text = serialize_entities(&items);
        prop_assert_eq!(parse_entities(&text), Prediction::EntityList(items), "text: {}", text);
    }

    #[test]
    fn parsers_are_total(raw in any::<String>(), n in 0usize..10) {
        let _ = parse_entities(&raw);
        let _ = parse_relevance(&raw);
        let _ = parse_ranking(&raw, n);
        let _ = parse_relation(&raw, &RELATION_LABELS);
        let _ = parse_answer(&raw);
    }

    #[test]
    fn entity_lists_are_duplicate_free(raw in "[a-zA-Z ,\n]{0,60}") {
        if let Prediction::EntityList(items) = parse_entities(&raw) {
            let mut lower: Vec<String> = items.iter().map(|s| s.to_lowercase()).collect();
            lower.sort();
            let before = lower.len();
            lower.dedup();
            prop_assert_eq!(before, lower.len());
        }
    }
}

#[test]
fn random_permutations_roundtrip() {
    assert_eq!(common::ranking_roundtrip_failures(1000, 5), 0);
}

#[test]
fn prose_wrapped_payloads_parse_the_same() {
    let (checked, failures) = common::prose_robustness_failures();
    assert!(checked >= 200);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn duplicate_ranks_are_unparseable() {
    for (text, n) in common::DUPLICATE_RANK_FIXTURES {
        match parse_ranking(text, n) {
            Prediction::Unparseable { reason, .. } => assert_eq!(reason, "duplicate rank", "{text}"),
            other => panic!("{text:?} parsed as {other:?}"),
        }
    }
}

#[test]
fn prose_stays_under_two_hundred_chars() {
    for p in common::PROSE {
        assert!(p.chars().count() <= 200);
    }
}
