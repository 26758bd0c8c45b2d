/// Lowercased word tokens. Letters, digits and apostrophes form words; every
/// other character separates them. Typographic apostrophes are folded to `'`.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        let ch = if ch == '\u{2019}' { '\'' } else { ch };
        if ch.is_alphanumeric() || ch == '\'' {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(trim_quotes(std::mem::take(&mut cur)));
        }
    }
    if !cur.is_empty() {
        out.push(trim_quotes(cur));
    }
    out.retain(|w| !w.is_empty());
    out
}

// Leading/trailing apostrophes are quotation marks, not contractions.
fn trim_quotes(w: String) -> String {
    let t = w.trim_matches('\'');
    if t.len() == w.len() {
        w
    } else {
        t.to_string()
    }
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Regular English inflections of a verb lemma: the lemma itself, third
/// person `-s`, past `-ed` and progressive `-ing`, with e-dropping and
/// consonant doubling for short consonant-vowel-consonant stems.
pub(crate) fn inflections(lemma: &str) -> Vec<String> {
    let b = lemma.as_bytes();
    let n = b.len();
    let mut forms = vec![lemma.to_string()];
    if n == 0 {
        return forms;
    }
    let last = b[n - 1];
    let third = if lemma.ends_with('s')
        || lemma.ends_with('x')
        || lemma.ends_with("ch")
        || lemma.ends_with("sh")
    {
        format!("{lemma}es")
    } else {
        format!("{lemma}s")
    };
    forms.push(third);

    let cvc = n >= 3
        && n <= 4
        && !is_vowel(b[n - 3])
        && is_vowel(b[n - 2])
        && !is_vowel(last)
        && !matches!(last, b'w' | b'x' | b'y');
    if last == b'e' {
        forms.push(format!("{lemma}d"));
        forms.push(format!("{}ing", &lemma[..n - 1]));
    } else if cvc {
        let doubled = format!("{lemma}{}", last as char);
        forms.push(format!("{doubled}ed"));
        forms.push(format!("{doubled}ing"));
    } else {
        forms.push(format!("{lemma}ed"));
        forms.push(format!("{lemma}ing"));
    }
    forms.extend(irregular(lemma).iter().map(|s| s.to_string()));
    forms.sort();
    forms.dedup();
    forms
}

fn irregular(lemma: &str) -> &'static [&'static str] {
    match lemma {
        "lay" => &["laid"],
        "put" => &["put"],
        "set" => &["set"],
        "find" => &["found"],
        "choose" => &["chose", "chosen"],
        "seek" => &["sought"],
        _ => &[],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize_words("Place a chair, near the WINDOW."),
            vec!["place", "a", "chair", "near", "the", "window"]
        );
        assert_eq!(tokenize_words("It isn\u{2019}t 'here'"), vec!["it", "isn't", "here"]);
    }

    #[test]
    fn inflection_rules() {
        let place = inflections("place");
        for w in ["place", "places", "placed", "placing"] {
            assert!(place.contains(&w.to_string()), "{w}");
        }
        let lay = inflections("lay");
        for w in ["lay", "lays", "laid", "laying"] {
            assert!(lay.contains(&w.to_string()), "{w}");
        }
        let put = inflections("put");
        assert!(put.contains(&"putting".to_string()));
        let set = inflections("set");
        assert!(set.contains(&"setting".to_string()));
        let add = inflections("add");
        assert!(add.contains(&"added".to_string()));
        let position = inflections("position");
        assert!(position.contains(&"positioned".to_string()));
        let search = inflections("search");
        assert!(search.contains(&"searches".to_string()));
    }
}
