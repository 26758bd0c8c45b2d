use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

/// Fixed instruction lines, in order. `{I-VERB}` is substituted per call.
/// The imperative-preference line is inserted before the "Declarative" line
/// with probability [`PromptTemplate::imperative_prob`].
pub const TEMPLATE_LINES: [&str; 7] = [
    "You are a helpful chatbot.",
    "Following sentences locate ONLY ONE object in a scene.",
    "Transform the sentence to create this object.",
    "Include generative verbs such as '{I-VERB}' to create it.",
    "Change 'the' to 'a' or 'an' properly.",
    "Declarative sentences such as 'there is' are disallowed.",
    "Avoid multiple imperative sentences.",
];

/// Spelling kept as in the original template.
pub const IMPERATIVE_LINE: &str = "Imperative sentences are prefered.";

const VERB_SLOT: &str = "{I-VERB}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub imperative_prob: f64,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            imperative_prob: 0.5,
        }
    }
}

impl PromptTemplate {
    pub fn render<R: Rng + ?Sized>(
        &self,
        text: &str,
        verb: &str,
        rng: &mut R,
    ) -> Result<String, PipelineError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(PipelineError::EmptyInput("text"));
        }
        if verb.trim().is_empty() {
            return Err(PipelineError::EmptyInput("verb"));
        }
        let imperative = rng.random_bool(self.imperative_prob.clamp(0.0, 1.0));
        let mut lines: Vec<String> = Vec::with_capacity(TEMPLATE_LINES.len() + 3);
        for (i, line) in TEMPLATE_LINES.iter().enumerate() {
            if i == 5 && imperative {
                lines.push(IMPERATIVE_LINE.to_string());
            }
            lines.push(line.replace(VERB_SLOT, verb));
        }
        lines.push(String::new());
        lines.push(text.to_string());
        Ok(lines.join("\n"))
    }
}

/// Renders the default template (imperative line with probability 0.5).
pub fn render_prompt<R: Rng + ?Sized>(
    text: &str,
    verb: &str,
    rng: &mut R,
) -> Result<String, PipelineError> {
    PromptTemplate::default().render(text, verb, rng)
}

/// Pulls the verb and the original text back out of a rendered prompt.
pub(crate) fn parse_prompt(prompt: &str) -> Option<(String, String)> {
    let verb_line = prompt
        .lines()
        .find(|l| l.starts_with("Include generative verbs such as '"))?;
    let rest = verb_line.strip_prefix("Include generative verbs such as '")?;
    let verb = rest.split('\'').next()?.to_string();
    let text = prompt.lines().rev().find(|l| !l.trim().is_empty())?.trim().to_string();
    Some((verb, text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn contains_fixed_lines_and_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = render_prompt("Find the chair near the window.", "place", &mut rng).unwrap();
        assert!(p.contains("Following sentences locate ONLY ONE object in a scene."));
        assert!(p.contains("Include generative verbs such as 'place' to create it."));
        assert!(p.ends_with("Find the chair near the window."));
        for line in TEMPLATE_LINES.iter().filter(|l| !l.contains(VERB_SLOT)) {
            assert!(p.lines().any(|l| l == *line), "missing {line}");
        }
    }

    #[test]
    fn empty_text_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            render_prompt("   ", "add", &mut rng),
            Err(PipelineError::EmptyInput(_))
        ));
    }

    #[test]
    fn imperative_line_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                render_prompt("Find the lamp", "add", &mut rng)
                    .unwrap()
                    .contains(IMPERATIVE_LINE)
            })
            .count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.02, "{f}");
    }

    #[test]
    fn parse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = render_prompt("The lamp by the bed", "situate", &mut rng).unwrap();
        assert_eq!(
            parse_prompt(&p),
            Some(("situate".to_string(), "The lamp by the bed".to_string()))
        );
    }
}
