use serde::{Deserialize, Serialize};

use crate::verbs::VerbTable;
use crate::words::{inflections, tokenize_words};

/// Locating verbs that must not survive a rewrite. Extensible by callers
/// through [`filter_blacklist_with`].
pub const BLACKLIST: [&str; 10] = [
    "find", "pick", "choose", "select", "locate", "identify", "search", "seek", "spot", "gaze",
];

/// Negative words; any token ending in `n't` also counts.
pub const NEGATIONS: [&str; 4] = ["no", "not", "nowhere", "nothing"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterRule {
    /// Leftover locating word.
    A,
    /// No generative verb.
    B,
    /// Negation dropped.
    C,
}

impl std::fmt::Display for FilterRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterRule::A => "a",
            FilterRule::B => "b",
            FilterRule::C => "c",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub status: FilterStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_rule: Option<FilterRule>,
    /// The offending token for rules (a) and (c); empty otherwise.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub matched_token: String,
}

impl FilterVerdict {
    pub fn pass() -> Self {
        Self {
            status: FilterStatus::Pass,
            failed_rule: None,
            matched_token: String::new(),
        }
    }

    pub fn fail(rule: FilterRule, token: impl Into<String>) -> Self {
        Self {
            status: FilterStatus::Fail,
            failed_rule: Some(rule),
            matched_token: token.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == FilterStatus::Pass
    }
}

/// Rule (a): fails on the first blacklisted lemma (or an inflection of it)
/// found as a whole word.
pub fn filter_blacklist(paraphrase: &str) -> FilterVerdict {
    filter_blacklist_with(paraphrase, &BLACKLIST)
}

pub fn filter_blacklist_with(paraphrase: &str, lemmas: &[&str]) -> FilterVerdict {
    let forms: Vec<(String, &str)> = lemmas
        .iter()
        .flat_map(|l| inflections(l).into_iter().map(move |f| (f, *l)))
        .collect();
    for word in tokenize_words(paraphrase) {
        if forms.iter().any(|(f, _)| *f == word) {
            return FilterVerdict::fail(FilterRule::A, word);
        }
    }
    FilterVerdict::pass()
}

/// Rule (b): passes when any inflection of any table verb occurs.
pub fn filter_generative_verb(paraphrase: &str, table: &VerbTable) -> FilterVerdict {
    let forms = table.surface_forms();
    let hit = tokenize_words(paraphrase)
        .into_iter()
        .find(|w| forms.binary_search(w).is_ok());
    match hit {
        Some(w) => FilterVerdict {
            matched_token: w,
            ..FilterVerdict::pass()
        },
        None => FilterVerdict::fail(FilterRule::B, ""),
    }
}

fn first_negation(text: &str) -> Option<String> {
    tokenize_words(text)
        .into_iter()
        .find(|w| NEGATIONS.contains(&w.as_str()) || w.ends_with("n't"))
}

/// Rule (c): the original carries a negation and the paraphrase has none.
pub fn filter_negation(original: &str, paraphrase: &str) -> FilterVerdict {
    match first_negation(original) {
        Some(neg) if first_negation(paraphrase).is_none() => FilterVerdict::fail(FilterRule::C, neg),
        _ => FilterVerdict::pass(),
    }
}

/// All three filters in rule order.
pub fn run_filters(original: &str, paraphrase: &str, table: &VerbTable) -> [FilterVerdict; 3] {
    [
        filter_blacklist(paraphrase),
        filter_generative_verb(paraphrase, table),
        filter_negation(original, paraphrase),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blacklist_whole_words_only() {
        assert_eq!(
            filter_blacklist("Find the chair near the window"),
            FilterVerdict::fail(FilterRule::A, "find")
        );
        assert!(filter_blacklist("Place a chair near the window").passed());
        assert!(filter_blacklist("Use the finder app").passed());
        assert_eq!(
            filter_blacklist("The one you are LOCATING is red").failed_rule,
            Some(FilterRule::A)
        );
    }

    #[test]
    fn generative_verb_inflections() {
        let t = VerbTable::default();
        assert!(filter_generative_verb("A chair is placed near the window", &t).passed());
        assert_eq!(
            filter_generative_verb("The chair near the window", &t),
            FilterVerdict::fail(FilterRule::B, "")
        );
        assert!(filter_generative_verb("Generate a lamp", &t).passed());
        assert!(filter_generative_verb("A rug was laid by the door", &t).passed());
    }

    #[test]
    fn negation_rule() {
        assert_eq!(
            filter_negation("the chair that is not near the door", "Place a chair near the door"),
            FilterVerdict::fail(FilterRule::C, "not")
        );
        assert!(filter_negation("the chair near the door", "Add a chair by the door").passed());
        assert!(filter_negation("not the red one", "Add a lamp that is not red").passed());
        assert!(filter_negation("it isn't by the bed", "Put a lamp that isn't by the bed").passed());
        assert_eq!(
            filter_negation("it isn't by the bed", "Put a lamp by the bed").matched_token,
            "isn't"
        );
    }

    #[test]
    fn case_insensitive() {
        assert_eq!(filter_blacklist("FIND it"), filter_blacklist("find it"));
        assert_eq!(filter_negation("NOT here", "x"), filter_negation("not here", "x"));
    }
}
