//! Property tests for the rule filters and the rule-based rewriter.

use proptest::prelude::*;

use sceneaug_instruct::{run_filters, FilterRule, MockClient, VerbTable, BLACKLIST, NEGATIONS};

const NEUTRAL: [&str; 12] = [
    "the", "chair", "near", "window", "a", "red", "lamp", "beside", "table", "small", "on", "floor",
];

fn neutral_sentence() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(&NEUTRAL[..]), 1..10)
}

fn recase(text: &str, mask: u64) -> String {
    text.chars()
        .enumerate()
        .map(|(i, c)| if mask >> (i % 64) & 1 == 1 { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

fn failed(original: &str, paraphrase: &str) -> Vec<Option<FilterRule>> {
    run_filters(original, paraphrase, &VerbTable::default())
        .iter()
        .map(|v| v.failed_rule)
        .collect()
}

proptest! {
    #[test]
    fn verdicts_ignore_letter_case(words in neutral_sentence(), extra in prop::sample::select(&BLACKLIST[..]), neg in prop::sample::select(&NEGATIONS[..]), m1 in any::<u64>(), m2 in any::<u64>()) {
        let original = format!("{} {neg} {}", words.join(" "), extra);
        let paraphrase = format!("Place {} {extra}", words.join(" "));
        prop_assert_eq!(failed(&original, &paraphrase), failed(&recase(&original, m1), &recase(&paraphrase, m2)));
    }

    #[test]
    fn verdicts_are_deterministic(original in "[a-zA-Z' ]{0,40}", paraphrase in "[a-zA-Z' ]{0,40}") {
        prop_assert_eq!(failed(&original, &paraphrase), failed(&original, &paraphrase));
    }

    #[test]
    fn each_rule_fires_on_its_own(words in neutral_sentence(), bad in prop::sample::select(&BLACKLIST[..]), neg in prop::sample::select(&NEGATIONS[..])) {
        let body = words.join(" ");
        prop_assert_eq!(failed(&body, &format!("Place {body}")), vec![None, None, None]);
        prop_assert_eq!(failed(&body, &format!("Place {body} {bad}")), vec![Some(FilterRule::A), None, None]);
        prop_assert_eq!(failed(&body, &body), vec![None, Some(FilterRule::B), None]);
        prop_assert_eq!(failed(&format!("{neg} {body}"), &format!("Place {body}")), vec![None, None, Some(FilterRule::C)]);
    }

    #[test]
    fn rewrite_of_a_locating_sentence_passes(words in neutral_sentence(), lead in prop::sample::select(&BLACKLIST[..]), verb in prop::sample::select(vec!["add", "place", "insert", "situate"])) {
        let original = format!("{} {}", lead, words.join(" "));
        let rewritten = MockClient::rewrite(verb, &original);
        prop_assert!(rewritten.to_lowercase().starts_with(verb));
        prop_assert_eq!(failed(&original, &rewritten), vec![None, None, None]);
    }
}
