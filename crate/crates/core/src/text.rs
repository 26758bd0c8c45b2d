//! Word-level tokenizer and vocabulary for the text encoder.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Lowercases and splits on whitespace; punctuation becomes its own token.
/// Apostrophes inside a word are kept (`isn't`).
pub fn tokenize_text(text: &str) -> Result<Vec<String>> {
    if text.trim().is_empty() {
        bail!(EmptyInput, "text is empty");
    }
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        let chars: Vec<char> = chunk.chars().collect();
        for (i, &c) in chars.iter().enumerate() {
            let inner_apostrophe = (c == '\'' || c == '’')
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_alphanumeric() || c == '_' || inner_apostrophe {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub truncated: bool,
}

/// Token ↔ id map; id 0 is reserved for unknown words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = crate::error::Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            bail!(InvalidArgument, "vocabulary must start with {UNK}");
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        if index.len() != tokens.len() {
            bail!(InvalidArgument, "vocabulary has duplicate tokens");
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Sorted vocabulary of every token in `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(tokenize_text(t)?);
        }
        set.remove(UNK);
        let tokens = std::iter::once(UNK.to_string()).chain(set).collect::<Vec<_>>();
        Self::try_from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokenizes and maps to ids, keeping at most `max_tokens`.
    pub fn encode(&self, text: &str, max_tokens: usize) -> Result<Encoded> {
        if max_tokens == 0 {
            bail!(InvalidArgument, "max_tokens must be positive");
        }
        let toks = tokenize_text(text)?;
        let truncated = toks.len() > max_tokens;
        Ok(Encoded {
            ids: toks.iter().take(max_tokens).map(|t| self.id(t)).collect(),
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize_text("Place a chair").unwrap(), ["place", "a", "chair"]);
        assert_eq!(tokenize_text("near the door, please.").unwrap(), ["near", "the", "door", ",", "please", "."]);
        assert_eq!(tokenize_text("it isn't 'here'").unwrap(), ["it", "isn't", "'", "here", "'"]);
        let once = tokenize_text("Put A Lamp").unwrap().join(" ");
        assert_eq!(tokenize_text(&once).unwrap().join(" "), once);
        assert!(tokenize_text("  ").is_err());
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocab::build(["place a chair"]).unwrap();
        let e = v.encode("place a zebra", 8).unwrap();
        assert_eq!(e.ids[2], UNK_ID);
        assert_ne!(e.ids[0], UNK_ID);
        assert!(!e.truncated);
        let e = v.encode("place a chair a chair", 3).unwrap();
        assert_eq!(e.ids.len(), 3);
        assert!(e.truncated);
    }
}
