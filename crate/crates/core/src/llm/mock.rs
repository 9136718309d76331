use std::collections::BTreeSet;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmError, RequestTag};
use crate::prompt::roster_from_prompt;
use crate::script::{ErrorCode, BEGIN_MARKER, END_MARKER};
use crate::seed::{hash64, rng_from_seed, SeededRng};

/// Canned ways the mock breaks the output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Malformation {
    MissingBegin,
    MissingEnd,
    UnknownSpeaker,
    UnbracketedSpeaker,
}

impl Malformation {
    pub const ALL: [Malformation; 4] = [
        Self::MissingBegin,
        Self::MissingEnd,
        Self::UnknownSpeaker,
        Self::UnbracketedSpeaker,
    ];

    /// Validator code this malformation must trigger.
    pub fn expected_code(self) -> ErrorCode {
        match self {
            Self::MissingBegin => ErrorCode::MissingBeginMarker,
            Self::MissingEnd => ErrorCode::MissingEndMarker,
            Self::UnknownSpeaker => ErrorCode::UnknownSpeaker,
            Self::UnbracketedSpeaker => ErrorCode::MalformedTurnLine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MalformationPolicy {
    Never,
    /// Each request is malformed with this probability.
    Rate(f64),
    /// Every attempt for these conversation indices is malformed.
    Conversations(BTreeSet<u64>),
    Always(Malformation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockResponse {
    pub text: String,
    pub malformation: Option<Malformation>,
}

/// Deterministic stand-in for a language model.
///
/// Per request, a generator seeded with `hash64(seed, tag.seed)` makes draws
/// in a fixed order: a uniform `f64` deciding malformation under
/// [`MalformationPolicy::Rate`] (malformed iff `u < rate`), then the
/// malformation kind, then the conversation body. Conversations have 6 to 16
/// turns over the roster found in the prompt preamble.
#[derive(Debug, Clone)]
pub struct MockLlm {
    pub seed: u64,
    pub policy: MalformationPolicy,
    pub latency: Duration,
}

const LINES: &[&str] = &[
    "Did you guys hear about the new comedy club opening up downtown?",
    "I think it's going to be huge!",
    "Really? I hadn't heard. What makes you say that?",
    "My cousin works there and says the lineup is incredible.",
    "I'm not sure stand-up is really my thing.",
    "Come on, you laughed for an hour at the last show we saw.",
    "That was different, the comedian was a friend of mine.",
    "Has anyone tried the bakery on the corner yet?",
    "Their sourdough is the best in town, honestly.",
    "I went there last weekend and they had already sold out by noon.",
    "We should plan a trip somewhere warm this winter.",
    "I'd love that, as long as there's a beach involved.",
    "Beaches are fine, but I'd rather go hiking in the mountains.",
    "Why not both? There are places with mountains right by the sea.",
    "That sounds like a lot of planning.",
    "I can put together an itinerary if everyone agrees.",
    "You always say that and then we end up improvising.",
    "Improvising is half the fun, isn't it?",
    "I read an article about how sleep affects memory.",
    "So that's why I can never remember where my keys are.",
    "Maybe you just need a better hook by the door.",
    "Speaking of memory, does anyone remember who won the quiz last month?",
    "I believe it was the team from the library.",
    "They practice every single week, it's not even fair.",
    "Well, maybe we should start practicing too.",
    "I agree! Let's meet on Thursday evenings.",
    "Thursday works for me, but not before seven.",
    "Seven is perfect. I'll bring snacks.",
    "Sometimes, I think about how lucky we are to have this group.",
    "That's great! I feel the same way.",
];

const DIRECTIONS: &[&str] = &["(laughs)", "\\(squinting\\)", "*nods*", "(sighs)", "(smiling)"];

const PREAMBLES: &[&str] = &[
    "Here is the conversation:",
    "Sure! Here's a lively conversation between the characters.",
];

impl MockLlm {
    pub fn new(seed: u64, policy: MalformationPolicy) -> Self {
        Self {
            seed,
            policy,
            latency: Duration::ZERO,
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn respond(&self, prompt: &str, tag: &RequestTag) -> Result<MockResponse, LlmError> {
        let roster = roster_from_prompt(prompt);
        if roster.is_empty() {
            return Err(LlmError::Backend {
                status: 400,
                body: "prompt has no persona preamble".into(),
            });
        }
        let mut rng = rng_from_seed(hash64(self.seed, tag.seed));
        let u: f64 = rng.gen();
        let kind = Malformation::ALL[rng.gen_range(0..Malformation::ALL.len())];
        let malformation = match &self.policy {
            MalformationPolicy::Never => None,
            MalformationPolicy::Rate(p) => (u < *p).then_some(kind),
            MalformationPolicy::Conversations(ids) => {
                ids.contains(&tag.conversation).then_some(kind)
            }
            MalformationPolicy::Always(m) => Some(*m),
        };

        let mut turns = conversation_body(&roster, &mut rng);
        let mut begin = true;
        let mut end = true;
        match malformation {
            None => {}
            Some(Malformation::MissingBegin) => begin = false,
            Some(Malformation::MissingEnd) => end = false,
            Some(Malformation::UnknownSpeaker) => {
                let i = rng.gen_range(0..turns.len());
                turns[i].0 = outsider_name(&roster);
            }
            Some(Malformation::UnbracketedSpeaker) => {
                let i = rng.gen_range(0..turns.len());
                let (name, text) = &turns[i];
                turns[i] = (String::new(), format!("{name}: {text}"));
            }
        }

        let mut text = String::new();
        if rng.gen_bool(0.3) {
            text.push_str(PREAMBLES[rng.gen_range(0..PREAMBLES.len())]);
            text.push_str("\n\n");
        }
        if begin {
            text.push_str(BEGIN_MARKER);
            text.push_str("\n\n");
        }
        for (name, line) in &turns {
            if name.is_empty() {
                text.push_str(line);
            } else {
                text.push_str(&format!("[{name}] {line}"));
            }
            text.push('\n');
        }
        if end {
            text.push('\n');
            text.push_str(END_MARKER);
            text.push('\n');
        }
        Ok(MockResponse { text, malformation })
    }
}

fn conversation_body(roster: &[String], rng: &mut SeededRng) -> Vec<(String, String)> {
    let n_turns = rng.gen_range(6..=16);
    let mut speaker = rng.gen_range(0..roster.len());
    let mut turns = Vec::with_capacity(n_turns);
    for _ in 0..n_turns {
        let mut line = LINES[rng.gen_range(0..LINES.len())].to_string();
        if rng.gen_bool(0.15) {
            let d = DIRECTIONS[rng.gen_range(0..DIRECTIONS.len())];
            line = format!("{d} {line}");
        }
        turns.push((roster[speaker].clone(), line));
        // mostly round-robin, sometimes a jump to someone else
        if roster.len() > 1 {
            if rng.gen_bool(0.7) {
                speaker = (speaker + 1) % roster.len();
            } else {
                speaker = (speaker + rng.gen_range(1..roster.len())) % roster.len();
            }
        }
    }
    turns
}

fn outsider_name(roster: &[String]) -> String {
    let mut name = String::from("Zoe");
    let mut k = 0;
    while roster.contains(&name) {
        k += 1;
        name = format!("Zoe{k}");
    }
    name
}

impl LlmBackend for MockLlm {
    fn complete(&self, prompt: &str, tag: &RequestTag) -> Result<String, LlmError> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        Ok(self.respond(prompt, tag)?.text)
    }
}
