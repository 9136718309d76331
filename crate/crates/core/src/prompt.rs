//! Few-shot prompt rendering.

use thiserror::Error;

use crate::persona::Persona;
use crate::script::{BEGIN_MARKER, END_MARKER};

/// First line of the fixed instruction block. Everything above it in a
/// prompt is the persona preamble.
pub const INSTRUCTION_LEAD: &str =
    "They are all sitting around a table, having a lively and engaging conversation.";

const INSTRUCTIONS: &str = "Always place the whole story inside [CONV_BEGIN] and [CONV_END]. \
The order of the personas doesn't have to be in sequential order; it could be random. \
When referring to each character, please put their name in square brackets. \
Follow the format of the following example:";

const EXAMPLES: [[&str; 2]; 2] = [
    ["I believe there's a lot to be discussed.", "I agree!"],
    [
        "Sometimes, I think about my life being good.",
        "That's great! I envy you.",
    ],
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("a conversation needs at least 2 participants, got {0}")]
    RosterTooSmall(usize),
    #[error("persona {0:?} appears twice in the roster")]
    DuplicateName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    /// Persona names in prompt order.
    pub roster: Vec<String>,
}

/// One preamble line: name, characteristics, personality. The voice style is
/// deliberately left out; it only matters to speech synthesis.
pub fn describe_persona(p: &Persona) -> String {
    let mut parts = Vec::with_capacity(p.characteristics.len() + 2);
    parts.push(p.name.as_str());
    parts.extend(p.characteristics.iter().map(String::as_str));
    if !p.personality.is_empty() {
        parts.push(p.personality.as_str());
    }
    parts.join(", ")
}

pub fn build_prompt(roster: &[Persona]) -> Result<PromptText, PromptError> {
    if roster.len() < 2 {
        return Err(PromptError::RosterTooSmall(roster.len()));
    }
    for (i, p) in roster.iter().enumerate() {
        if roster[..i].iter().any(|q| q.name == p.name) {
            return Err(PromptError::DuplicateName(p.name.clone()));
        }
    }

    let mut text = String::new();
    for p in roster {
        text.push_str(&describe_persona(p));
        text.push('\n');
    }
    text.push_str(INSTRUCTION_LEAD);
    text.push(' ');
    text.push_str(INSTRUCTIONS);
    text.push('\n');

    let (first, second) = (&roster[0].name, &roster[1].name);
    for (i, [a, b]) in EXAMPLES.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        text.push_str(&format!(
            "Example {}:\n{BEGIN_MARKER}\n\n[{first}] {a}\n[{second}] {b}\n\n{END_MARKER}\n",
            i + 1
        ));
    }

    Ok(PromptText {
        text,
        roster: roster.iter().map(|p| p.name.clone()).collect(),
    })
}

/// Recover roster names from a prompt's persona preamble.
pub fn roster_from_prompt(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .take_while(|l| !l.starts_with(INSTRUCTION_LEAD))
        .filter_map(|l| l.split(',').next())
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(str::to_string)
        .collect()
}
