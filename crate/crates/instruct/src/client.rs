use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::BLACKLIST;
use crate::template::parse_prompt;
use crate::words::inflections;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("paraphrase service returned HTTP {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("connection failed: {0}")]
    Connection(String),
}

impl TransportError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, TransportError::EmptyPrompt)
    }
}

/// Request body of the paraphrase wire contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaphraseRequest {
    pub prompt: String,
}

/// Response body of the paraphrase wire contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseResponse {
    pub text: String,
}

/// A service that rewrites a rendered prompt into one sentence.
pub trait ParaphraseClient: Send + Sync {
    /// Transport-level call; `prompt` is already validated.
    fn send(&self, prompt: &str) -> Result<String, TransportError>;

    fn paraphrase(&self, prompt: &str) -> Result<String, TransportError> {
        if prompt.trim().is_empty() {
            return Err(TransportError::EmptyPrompt);
        }
        self.send(prompt)
    }
}

impl<C: ParaphraseClient + ?Sized> ParaphraseClient for &C {
    fn send(&self, prompt: &str) -> Result<String, TransportError> {
        (**self).send(prompt)
    }
}

impl<C: ParaphraseClient + ?Sized> ParaphraseClient for Box<C> {
    fn send(&self, prompt: &str) -> Result<String, TransportError> {
        (**self).send(prompt)
    }
}

/// Deterministic rule-based stand-in for a hosted language model.
///
/// Drops a leading locating verb, swaps the following definite article for
/// an indefinite one and puts the prompt's verb in front:
/// `"Find the chair near the window"` with verb `place` becomes
/// `"Place a chair near the window"`. Everything else is kept verbatim, so
/// locating words deeper in the sentence survive and negations are preserved.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockClient;

impl MockClient {
    pub fn rewrite(verb: &str, text: &str) -> String {
        let blacklist: Vec<String> = BLACKLIST.iter().flat_map(|w| inflections(w)).collect();
        let mut words: Vec<&str> = text.split_whitespace().collect();
        let bare = |w: &str| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        };
        if words.first().is_some_and(|w| blacklist.contains(&bare(w))) {
            words.remove(0);
        }
        let mut out = capitalize(verb);
        if let Some(first) = words.first() {
            if bare(first) == "the" {
                let next_vowel = words
                    .get(1)
                    .and_then(|w| w.chars().next())
                    .is_some_and(|c| "aeiouAEIOU".contains(c));
                out.push_str(if next_vowel { " an" } else { " a" });
                words.remove(0);
            }
        }
        for w in words {
            out.push(' ');
            out.push_str(w);
        }
        out
    }
}

fn capitalize(word: &str) -> String {
    let mut cs = word.chars();
    match cs.next() {
        Some(c) => c.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

impl ParaphraseClient for MockClient {
    fn send(&self, prompt: &str) -> Result<String, TransportError> {
        let (verb, text) = parse_prompt(prompt)
            .ok_or_else(|| TransportError::Malformed("prompt does not follow the template".into()))?;
        Ok(Self::rewrite(&verb, &text))
    }
}

/// Returns the original sentence unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoClient;

impl ParaphraseClient for EchoClient {
    fn send(&self, prompt: &str) -> Result<String, TransportError> {
        parse_prompt(prompt)
            .map(|(_, text)| text)
            .ok_or_else(|| TransportError::Malformed("prompt does not follow the template".into()))
    }
}

/// Replays canned replies keyed by the original sentence. The n-th call for
/// a sentence gets the n-th reply; the last reply repeats once exhausted.
/// Unknown sentences are echoed.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    replies: HashMap<String, Vec<Result<String, TransportError>>>,
    calls: Mutex<HashMap<String, usize>>,
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, original: &str, replies: Vec<Result<String, TransportError>>) -> Self {
        self.replies.insert(original.trim().to_string(), replies);
        self
    }

    pub fn calls(&self, original: &str) -> usize {
        self.calls
            .lock()
            .expect("call counter poisoned")
            .get(original.trim())
            .copied()
            .unwrap_or(0)
    }
}

impl ParaphraseClient for ScriptedClient {
    fn send(&self, prompt: &str) -> Result<String, TransportError> {
        let (_, text) = parse_prompt(prompt)
            .ok_or_else(|| TransportError::Malformed("prompt does not follow the template".into()))?;
        let n = {
            let mut calls = self.calls.lock().expect("call counter poisoned");
            let c = calls.entry(text.clone()).or_insert(0);
            *c += 1;
            *c - 1
        };
        match self.replies.get(&text) {
            Some(rs) if !rs.is_empty() => rs[n.min(rs.len() - 1)].clone(),
            _ => Ok(text),
        }
    }
}

/// HTTP transport: `POST {endpoint}` with body `{"prompt": ...}`, expecting
/// `200` and `{"text": ...}`.
#[cfg(feature = "http")]
#[derive(Debug, Clone)]
pub struct HttpClient {
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "http")]
impl HttpClient {
    pub fn new(endpoint: impl Into<String>, timeout: std::time::Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

#[cfg(feature = "http")]
impl ParaphraseClient for HttpClient {
    fn send(&self, prompt: &str) -> Result<String, TransportError> {
        let body = ParaphraseRequest {
            prompt: prompt.to_string(),
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Status(status.as_u16()));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        let parsed: ParaphraseResponse =
            serde_json::from_slice(&bytes).map_err(|e| TransportError::Malformed(e.to_string()))?;
        Ok(parsed.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::render_prompt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prompt(text: &str, verb: &str) -> String {
        render_prompt(text, verb, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn mock_substitutes_template() {
        let out = MockClient
            .paraphrase(&prompt("Find the chair near the window", "place"))
            .unwrap();
        assert_eq!(out, "Place a chair near the window");
        let out = MockClient
            .paraphrase(&prompt("The armchair that is not red", "add"))
            .unwrap();
        assert_eq!(out, "Add an armchair that is not red");
    }

    #[test]
    fn empty_prompt_rejected_before_transport() {
        assert_eq!(MockClient.paraphrase("  \n"), Err(TransportError::EmptyPrompt));
    }

    #[test]
    fn scripted_replays_in_order() {
        let c = ScriptedClient::new().with(
            "Find the lamp",
            vec![Ok("Find a lamp".into()), Ok("Add a lamp".into())],
        );
        let p = prompt("Find the lamp", "add");
        assert_eq!(c.paraphrase(&p).unwrap(), "Find a lamp");
        assert_eq!(c.paraphrase(&p).unwrap(), "Add a lamp");
        assert_eq!(c.paraphrase(&p).unwrap(), "Add a lamp");
        assert_eq!(c.calls("Find the lamp"), 3);
    }

    #[test]
    fn request_json_shape() {
        let s = serde_json::to_string(&ParaphraseRequest {
            prompt: "héllo".into(),
        })
        .unwrap();
        assert_eq!(s, r#"{"prompt":"héllo"}"#);
        let r: ParaphraseResponse = serde_json::from_str(r#"{"text":"Add a lamp"}"#).unwrap();
        assert_eq!(r.text, "Add a lamp");
    }
}
