//! Two-stage voice synthesis: one fixed reference clip per persona, then
//! every turn is rendered by cloning that reference.

mod cache;
mod http;
mod mock;
pub mod pitch;

pub use cache::{CacheKey, VoiceCache};
pub use http::HttpVoice;
pub use mock::{mock_reference_f0, MockVoice, MOCK_REFERENCE_SECONDS};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::audio::{AudioClip, WavError};
use crate::persona::PersonaRegistry;
use crate::script::ConversationScript;
use crate::seed::{stable_hash, stable_hash_str};

/// Shortest reference clip a cloning model is given.
pub const MIN_REFERENCE_SECONDS: f64 = 2.0;

/// Extra seeds tried when a persona's reference collides with another's.
pub const MAX_DISTINCTNESS_RETRIES: u64 = 8;

#[derive(Debug, Error)]
pub enum VoiceError {
    #[error("voice backend error: {0}")]
    Backend(String),
    #[error("voice service returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("reference clip is {seconds:.2} s, shorter than {MIN_REFERENCE_SECONDS} s")]
    DurationTooShort { seconds: f64 },
    #[error("voice style is empty")]
    EmptyStyle,
    #[error("text to speak is empty")]
    EmptyText,
    #[error("backend returned empty audio")]
    EmptyAudio,
    #[error("backend returned {got} Hz audio, expected {expected} Hz")]
    WrongSampleRate { expected: u32, got: u32 },
    #[error("no voice profile for speaker {0:?}")]
    MissingProfile(String),
    #[error("could not find a distinct voice for {persona:?} within {MAX_DISTINCTNESS_RETRIES} retries")]
    DuplicateVoice { persona: String },
    #[error("persona {persona:?}: {source}")]
    Persona {
        persona: String,
        #[source]
        source: Box<VoiceError>,
    },
    #[error("turn {index}: {source}")]
    Turn {
        index: usize,
        #[source]
        source: Box<VoiceError>,
    },
    #[error("voice cache i/o on {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("voice cache entry {path} does not match its fingerprint")]
    CacheCorrupt { path: PathBuf },
    #[error(transparent)]
    Wav(#[from] WavError),
}

/// 64-bit content hash of a clip's 16-bit samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    pub fn of(clip: &AudioClip) -> Self {
        let bytes: Vec<u8> = clip
            .samples()
            .iter()
            .flat_map(|&s| crate::audio::quantize(s).to_le_bytes())
            .collect();
        Self(stable_hash(&bytes))
    }

    pub fn parse(hex: &str) -> Option<Self> {
        u64::from_str_radix(hex.trim(), 16).ok().map(Self)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Hash of a style description, used both in cache keys and by the mock
/// backend to pick a pitch.
pub fn style_hash(style: &str) -> u64 {
    stable_hash_str(style)
}

pub trait VoiceBackend: Send + Sync {
    /// Describe-to-voice: a reference clip for a style description.
    fn reference(&self, style: &str, seed: u64, sample_rate: u32)
        -> Result<AudioClip, VoiceError>;

    /// Clone the voice in `reference` and speak `text` with it.
    fn speak(
        &self,
        reference: &AudioClip,
        text: &str,
        sample_rate: u32,
    ) -> Result<AudioClip, VoiceError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceProfile {
    pub persona: String,
    pub style_hash: u64,
    /// Seed that produced the reference (base seed plus any distinctness
    /// retries).
    pub seed: u64,
    pub reference: AudioClip,
    pub fingerprint: Fingerprint,
}

pub type VoiceProfiles = BTreeMap<String, VoiceProfile>;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSegment {
    pub speaker: String,
    pub turn_index: usize,
    pub clip: AudioClip,
}

fn check_rate(clip: &AudioClip, expected: u32) -> Result<(), VoiceError> {
    if clip.sample_rate() != expected {
        return Err(VoiceError::WrongSampleRate {
            expected,
            got: clip.sample_rate(),
        });
    }
    Ok(())
}

/// Produce a reference clip, snapped to the 16-bit grid so a cached copy is
/// bit-identical to a fresh one.
pub fn make_reference(
    backend: &dyn VoiceBackend,
    style: &str,
    seed: u64,
    sample_rate: u32,
) -> Result<AudioClip, VoiceError> {
    if style.trim().is_empty() {
        return Err(VoiceError::EmptyStyle);
    }
    let clip = backend.reference(style, seed, sample_rate)?;
    check_rate(&clip, sample_rate)?;
    if clip.duration_s() < MIN_REFERENCE_SECONDS {
        return Err(VoiceError::DurationTooShort {
            seconds: clip.duration_s(),
        });
    }
    Ok(clip.quantized())
}

/// One profile per persona, in registry order. Each reference comes from the
/// cache when present. A reference whose fingerprint duplicates an earlier
/// persona's is regenerated with the next seed.
pub fn build_voice_profiles(
    registry: &PersonaRegistry,
    seed: u64,
    backend: &dyn VoiceBackend,
    sample_rate: u32,
    cache: Option<&VoiceCache>,
) -> Result<VoiceProfiles, VoiceError> {
    let mut profiles = VoiceProfiles::new();
    let mut taken = HashSet::new();
    for persona in registry.personas() {
        let wrap = |source| VoiceError::Persona {
            persona: persona.name.clone(),
            source: Box::new(source),
        };
        let hash = style_hash(&persona.style);
        let mut accepted = None;
        for bump in 0..=MAX_DISTINCTNESS_RETRIES {
            let key = CacheKey {
                persona: persona.name.clone(),
                style_hash: hash,
                seed: seed.wrapping_add(bump),
                sample_rate,
            };
            let cached = match cache {
                Some(c) => c.load(&key).map_err(wrap)?,
                None => None,
            };
            let (reference, fingerprint) = match cached {
                Some(hit) => hit,
                None => {
                    let clip = make_reference(backend, &persona.style, key.seed, sample_rate)
                        .map_err(wrap)?;
                    let fp = Fingerprint::of(&clip);
                    if let Some(c) = cache {
                        c.store(&key, &clip, fp).map_err(wrap)?;
                    }
                    (clip, fp)
                }
            };
            if taken.insert(fingerprint) {
                accepted = Some(VoiceProfile {
                    persona: persona.name.clone(),
                    style_hash: hash,
                    seed: key.seed,
                    reference,
                    fingerprint,
                });
                break;
            }
            log::debug!(
                "reference for {} with seed {} duplicates another voice",
                persona.name,
                key.seed
            );
        }
        let profile = accepted.ok_or_else(|| VoiceError::DuplicateVoice {
            persona: persona.name.clone(),
        })?;
        profiles.insert(persona.name.clone(), profile);
    }
    Ok(profiles)
}

pub fn clone_speech(
    backend: &dyn VoiceBackend,
    profile: &VoiceProfile,
    text: &str,
    sample_rate: u32,
) -> Result<AudioClip, VoiceError> {
    if text.trim().is_empty() {
        return Err(VoiceError::EmptyText);
    }
    let clip = backend.speak(&profile.reference, text, sample_rate)?;
    check_rate(&clip, sample_rate)?;
    if clip.is_empty() {
        return Err(VoiceError::EmptyAudio);
    }
    Ok(clip)
}

/// Render every turn, in order, with its speaker's profile.
pub fn render_script(
    script: &ConversationScript,
    profiles: &VoiceProfiles,
    backend: &dyn VoiceBackend,
    sample_rate: u32,
) -> Result<Vec<RenderedSegment>, VoiceError> {
    if let Some(t) = script
        .turns()
        .iter()
        .find(|t| !profiles.contains_key(&t.speaker))
    {
        return Err(VoiceError::MissingProfile(t.speaker.clone()));
    }
    script
        .turns()
        .iter()
        .enumerate()
        .map(|(index, turn)| {
            let clip = clone_speech(backend, &profiles[&turn.speaker], &turn.text, sample_rate)
                .map_err(|e| VoiceError::Turn {
                    index,
                    source: Box::new(e),
                })?;
            Ok(RenderedSegment {
                speaker: turn.speaker.clone(),
                turn_index: index,
                clip,
            })
        })
        .collect()
}
