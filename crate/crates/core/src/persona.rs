//! Conversational personas: loading, validation and roster sampling.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Phrase every voice style must carry so the description-driven TTS model
/// produces undistorted audio.
pub const CLEAR_AUDIO_PHRASE: &str = "very clear audio";

pub const MIN_PARTICIPANTS: usize = 2;
pub const MAX_PARTICIPANTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub name: String,
    #[serde(default)]
    pub characteristics: Vec<String>,
    pub personality: String,
    pub style: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationRule {
    EmptyName,
    IllegalCharacter(char),
    DuplicateName,
    MissingClearAudio,
}

impl fmt::Display for ValidationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyName => write!(f, "name is empty"),
            Self::IllegalCharacter(c) => {
                write!(f, "name contains illegal character {c:?} (letters and digits only)")
            }
            Self::DuplicateName => write!(f, "name is not unique"),
            Self::MissingClearAudio => write!(f, "style lacks the phrase {CLEAR_AUDIO_PHRASE:?}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("failed to read persona file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed persona file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("persona {persona:?}: {rule}")]
    Validation { persona: String, rule: ValidationRule },
    #[error("need at least {MIN_PARTICIPANTS} personas, found {found}")]
    TooFewPersonas { found: usize },
}

/// Non-fatal style findings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LintFinding {
    MissingClearAudio,
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingClearAudio => f.write_str("missing-clear-audio"),
        }
    }
}

/// Check a persona's voice style. The phrase match is case-sensitive.
pub fn lint_style(persona: &Persona) -> Vec<LintFinding> {
    if persona.style.contains(CLEAR_AUDIO_PHRASE) {
        Vec::new()
    } else {
        vec![LintFinding::MissingClearAudio]
    }
}

fn check_name(name: &str) -> Result<(), ValidationRule> {
    if name.is_empty() {
        return Err(ValidationRule::EmptyName);
    }
    match name.chars().find(|c| !c.is_alphanumeric()) {
        Some(c) => Err(ValidationRule::IllegalCharacter(c)),
        None => Ok(()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaFile {
    #[serde(default)]
    persona: Vec<Persona>,
}

/// Immutable, validated set of personas in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonaRegistry {
    personas: Vec<Persona>,
}

impl PersonaRegistry {
    pub fn new(personas: Vec<Persona>) -> Result<Self, PersonaError> {
        for (i, p) in personas.iter().enumerate() {
            let invalid = |rule| PersonaError::Validation {
                persona: p.name.clone(),
                rule,
            };
            check_name(&p.name).map_err(invalid)?;
            if personas[..i].iter().any(|q| q.name == p.name) {
                return Err(invalid(ValidationRule::DuplicateName));
            }
            if !lint_style(p).is_empty() {
                return Err(invalid(ValidationRule::MissingClearAudio));
            }
        }
        if personas.len() < MIN_PARTICIPANTS {
            return Err(PersonaError::TooFewPersonas {
                found: personas.len(),
            });
        }
        Ok(Self { personas })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PersonaError> {
        let file: PersonaFile = toml::from_str(text)?;
        Self::new(file.persona)
    }

    pub fn personas(&self) -> &[Persona] {
        &self.personas
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.personas.iter().map(|p| p.name.as_str())
    }

    pub fn sample_participants<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<Vec<Persona>, PersonaError> {
        sample_participants(&self.personas, rng)
    }
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<PersonaRegistry, PersonaError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PersonaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    PersonaRegistry::from_toml_str(&text)
}

/// Draw a conversation roster: the head count is uniform over
/// `2..=min(5, n)`, the members are distinct and in random order.
pub fn sample_participants<R: Rng + ?Sized>(
    personas: &[Persona],
    rng: &mut R,
) -> Result<Vec<Persona>, PersonaError> {
    let n = personas.len();
    if n < MIN_PARTICIPANTS {
        return Err(PersonaError::TooFewPersonas { found: n });
    }
    let count = rng.gen_range(MIN_PARTICIPANTS..=MAX_PARTICIPANTS.min(n));
    let mut indices: Vec<usize> = (0..n).collect();
    let (chosen, _) = indices.partial_shuffle(rng, count);
    Ok(chosen.iter().map(|&i| personas[i].clone()).collect())
}
