use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::pitch::estimate_f0;
use super::{style_hash, Fingerprint, VoiceBackend, VoiceError};
use crate::audio::AudioClip;
use crate::seed::stable_hash_str;

pub const MOCK_REFERENCE_SECONDS: f64 = 3.0;
const SECONDS_PER_WORD: f64 = 0.35;
const TRAILING_SECONDS: f64 = 0.25;
const SYLLABLE_RATE_HZ: f64 = 4.0;
const PARTIALS: [(f64, f64); 3] = [(1.0, 0.5), (2.0, 0.25), (3.0, 0.125)];

/// Pitch the mock assigns to a (style, seed) pair: `100 + (h xor seed) mod 200`
/// Hz, where `h` is the style hash.
pub fn mock_reference_f0(style: &str, seed: u64) -> f64 {
    100.0 + ((style_hash(style) ^ seed) % 200) as f64
}

/// Offline voice backend producing speech-like harmonic signals.
///
/// A voice is a stack of three partials at F0, 2F0 and 3F0 (amplitudes 0.5,
/// 0.25, 0.125), gated by a half-wave 4 Hz envelope so that "syllables" are
/// separated by digital silence. References are 3 s long; cloned speech lasts
/// `0.35 s × words + 0.25 s`, keeps the reference's measured F0, and scales
/// each word's syllables by a gain derived from the word.
#[derive(Debug, Default)]
pub struct MockVoice {
    fail_marker: Option<String>,
    reference_calls: AtomicUsize,
    speak_calls: AtomicUsize,
    pitch_memo: Mutex<HashMap<Fingerprint, f64>>,
}

impl MockVoice {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fail every reference request whose style contains `marker`.
    pub fn failing_on(mut self, marker: impl Into<String>) -> Self {
        self.fail_marker = Some(marker.into());
        self
    }

    pub fn reference_calls(&self) -> usize {
        self.reference_calls.load(Ordering::Relaxed)
    }

    pub fn speak_calls(&self) -> usize {
        self.speak_calls.load(Ordering::Relaxed)
    }

    fn reference_pitch(&self, reference: &AudioClip) -> Result<f64, VoiceError> {
        let fp = Fingerprint::of(reference);
        if let Some(&f0) = self.pitch_memo.lock().unwrap().get(&fp) {
            return Ok(f0);
        }
        let f0 = estimate_f0(reference.samples(), reference.sample_rate())
            .ok_or_else(|| VoiceError::Backend("reference clip has no measurable pitch".into()))?;
        self.pitch_memo.lock().unwrap().insert(fp, f0);
        Ok(f0)
    }
}

fn harmonic(f0: f64, t: f64) -> f64 {
    PARTIALS
        .iter()
        .map(|&(k, a)| a * (TAU * k * f0 * t).sin())
        .sum()
}

fn syllable_envelope(t: f64) -> f64 {
    (TAU * SYLLABLE_RATE_HZ * t).sin().max(0.0)
}

fn synthesize(f0: f64, len: usize, sample_rate: u32, gain: impl Fn(f64) -> f64) -> Vec<f32> {
    let rate = sample_rate as f64;
    (0..len)
        .map(|i| {
            let t = i as f64 / rate;
            (gain(t) * syllable_envelope(t) * harmonic(f0, t)) as f32
        })
        .collect()
}

fn to_clip(samples: Vec<f32>, sample_rate: u32) -> Result<AudioClip, VoiceError> {
    AudioClip::new(samples, sample_rate).map_err(|e| VoiceError::Backend(e.to_string()))
}

impl VoiceBackend for MockVoice {
    fn reference(
        &self,
        style: &str,
        seed: u64,
        sample_rate: u32,
    ) -> Result<AudioClip, VoiceError> {
        self.reference_calls.fetch_add(1, Ordering::Relaxed);
        if let Some(marker) = &self.fail_marker {
            if style.contains(marker.as_str()) {
                return Err(VoiceError::Backend(format!(
                    "mock refuses style containing {marker:?}"
                )));
            }
        }
        let f0 = mock_reference_f0(style, seed);
        let len = (MOCK_REFERENCE_SECONDS * sample_rate as f64).round() as usize;
        to_clip(synthesize(f0, len, sample_rate, |_| 1.0), sample_rate)
    }

    fn speak(
        &self,
        reference: &AudioClip,
        text: &str,
        sample_rate: u32,
    ) -> Result<AudioClip, VoiceError> {
        self.speak_calls.fetch_add(1, Ordering::Relaxed);
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Err(VoiceError::EmptyText);
        }
        let f0 = self.reference_pitch(reference)?;
        let gains: Vec<f64> = words
            .iter()
            .map(|w| 0.6 + 0.4 * (stable_hash_str(w) % 1000) as f64 / 1000.0)
            .collect();
        let seconds = SECONDS_PER_WORD * words.len() as f64 + TRAILING_SECONDS;
        let len = (seconds * sample_rate as f64).round() as usize;
        let gain = |t: f64| {
            let w = ((t / SECONDS_PER_WORD) as usize).min(gains.len() - 1);
            gains[w]
        };
        to_clip(synthesize(f0, len, sample_rate, gain), sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_deterministic_and_in_range() {
        let m = MockVoice::new();
        let a = m.reference("soft voice", 3, 24_000).unwrap();
        let b = m.reference("soft voice", 3, 24_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 72_000);
        assert!(a.peak() <= 0.875 + 1e-6);
        assert_eq!(m.reference_calls(), 2);
    }

    #[test]
    fn speech_duration_follows_word_count() {
        let m = MockVoice::new();
        let r = m.reference("x", 1, 16_000).unwrap();
        let c = m.speak(&r, "one two three four five six seven eight nine ten", 16_000).unwrap();
        assert_eq!(c.len(), (3.75f64 * 16_000.0).round() as usize);
    }

    #[test]
    fn f0_formula() {
        let f = mock_reference_f0("A woman speaks at a slow pace with very clear audio.", 7);
        assert!((100.0..300.0).contains(&f));
        assert_eq!(f.fract(), 0.0);
    }
}
