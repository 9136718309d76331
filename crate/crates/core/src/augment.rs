//! Background noise at a target SNR and synthetic reverberation.

use std::path::PathBuf;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{normalize_if_clipping, read_wav, AudioClip, AudioError, WavError};
use crate::seed::{hash64, rng_from_seed};

pub const MAX_RT60_S: f64 = 3.0;
/// ln(1000): amplitude decays by 60 dB over one RT60.
const DECAY_60DB: f64 = 6.91;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("cannot mix: {0} has zero power")]
    SilentInput(&'static str),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Wav(#[from] WavError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "path")]
pub enum NoiseSource {
    White,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    /// `None` disables noise mixing.
    #[serde(default)]
    pub noise: Option<NoiseSource>,
    #[serde(default = "default_snr")]
    pub target_snr_db: f64,
    /// 0 disables reverb.
    #[serde(default)]
    pub rt60_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_snr() -> f64 {
    20.0
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            noise: Some(NoiseSource::White),
            target_snr_db: default_snr(),
            rt60_s: 0.0,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !self.target_snr_db.is_finite() {
            return Err(AugmentError::InvalidSpec(format!(
                "target SNR must be finite, got {}",
                self.target_snr_db
            )));
        }
        if !(0.0..=MAX_RT60_S).contains(&self.rt60_s) {
            return Err(AugmentError::InvalidSpec(format!(
                "rt60 must be within [0, {MAX_RT60_S}] s, got {}",
                self.rt60_s
            )));
        }
        Ok(())
    }

    pub fn is_noop(&self) -> bool {
        self.noise.is_none() && self.rt60_s == 0.0
    }
}

/// Uniform white noise in [-1, 1).
pub fn white_noise(len: usize, sample_rate: u32, seed: u64) -> Result<AudioClip, AudioError> {
    let mut rng = rng_from_seed(seed);
    let samples = (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    AudioClip::new(samples, sample_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// Clean component as it appears in the output.
    pub signal: Vec<f32>,
    /// Scaled noise component as it appears in the output.
    pub noise: Vec<f32>,
    pub mixed: AudioClip,
}

/// `clip + g·noise` with `g` chosen so full-clip mean powers hit the target
/// ratio. Noise is looped to the clip length. If the sum would clip, both
/// components are scaled together.
pub fn mix_noise_components(
    clip: &AudioClip,
    noise: &AudioClip,
    target_snr_db: f64,
) -> Result<Mixture, AugmentError> {
    if clip.sample_rate() != noise.sample_rate() {
        return Err(AudioError::MixedSampleRates(clip.sample_rate(), noise.sample_rate()).into());
    }
    if !target_snr_db.is_finite() {
        return Err(AugmentError::InvalidSpec(format!(
            "target SNR must be finite, got {target_snr_db}"
        )));
    }
    let ps = clip.power();
    if ps == 0.0 {
        return Err(AugmentError::SilentInput("signal"));
    }
    if noise.is_empty() || noise.power() == 0.0 {
        return Err(AugmentError::SilentInput("noise"));
    }
    let looped: Vec<f64> = noise
        .samples()
        .iter()
        .cycle()
        .take(clip.len())
        .map(|&s| s as f64)
        .collect();
    let pn = looped.iter().map(|s| s * s).sum::<f64>() / looped.len() as f64;
    if pn == 0.0 {
        return Err(AugmentError::SilentInput("noise"));
    }
    let g = (ps / (pn * 10f64.powf(target_snr_db / 10.0))).sqrt();

    let sum_peak = clip
        .samples()
        .iter()
        .zip(&looped)
        .map(|(&s, &n)| (s as f64 + g * n).abs())
        .fold(0.0, f64::max);
    let joint = if sum_peak > 1.0 { 1.0 / sum_peak } else { 1.0 };

    let signal: Vec<f32> = clip.samples().iter().map(|&s| (s as f64 * joint) as f32).collect();
    let noise: Vec<f32> = looped.iter().map(|&n| (n * g * joint) as f32).collect();
    let mixed = signal
        .iter()
        .zip(&noise)
        .map(|(&s, &n)| (s + n).clamp(-1.0, 1.0))
        .collect();
    Ok(Mixture {
        signal,
        noise,
        mixed: AudioClip::new(mixed, clip.sample_rate())?,
    })
}

pub fn mix_noise(clip: &AudioClip, noise: &AudioClip, target_snr_db: f64) -> Result<AudioClip, AugmentError> {
    Ok(mix_noise_components(clip, noise, target_snr_db)?.mixed)
}

/// `round(rt60 × rate)` taps: a unit direct path followed by seeded uniform
/// noise under an `exp(-6.91·t/rt60)` envelope.
pub fn impulse_response(rt60_s: f64, sample_rate: u32, seed: u64) -> Vec<f32> {
    let len = ((rt60_s * sample_rate as f64).round() as usize).max(1);
    let mut rng = rng_from_seed(seed);
    let tau = sample_rate as f64 * rt60_s;
    let mut ir = Vec::with_capacity(len);
    ir.push(1.0);
    for n in 1..len {
        let u: f64 = rng.gen_range(-1.0..1.0);
        ir.push((u * (-DECAY_60DB * n as f64 / tau).exp()) as f32);
    }
    ir
}

fn convolve(a: &[f32], b: &[f32]) -> Vec<f32> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f32]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let mut fa = lift(a);
    let mut fb = lift(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|c| (c.re * scale) as f32).collect()
}

/// Convolve with [`impulse_response`]. Output keeps the full tail
/// (`len + taps - 1` samples) and is peak-normalized only if it clips.
pub fn add_reverb(clip: &AudioClip, rt60_s: f64, seed: u64) -> Result<AudioClip, AugmentError> {
    if !(rt60_s > 0.0 && rt60_s <= MAX_RT60_S) {
        return Err(AugmentError::InvalidSpec(format!(
            "rt60 must be within (0, {MAX_RT60_S}] s, got {rt60_s}"
        )));
    }
    if clip.is_empty() {
        return Ok(clip.clone());
    }
    let ir = impulse_response(rt60_s, clip.sample_rate(), seed);
    let mut out = convolve(clip.samples(), &ir);
    normalize_if_clipping(&mut out);
    Ok(AudioClip::new(out, clip.sample_rate())?)
}

/// Noise source for a clip of `len` samples.
pub fn noise_for(spec: &AugmentSpec, source: &NoiseSource, len: usize, sample_rate: u32) -> Result<AudioClip, AugmentError> {
    match source {
        NoiseSource::White => Ok(white_noise(len, sample_rate, hash64(spec.seed, 0x6e6f_6973))?),
        NoiseSource::File(path) => {
            let clip = read_wav(path)?;
            if clip.sample_rate() != sample_rate {
                return Err(AudioError::MixedSampleRates(sample_rate, clip.sample_rate()).into());
            }
            Ok(clip)
        }
    }
}

/// Reverb first (if enabled), then noise (if enabled).
pub fn apply(clip: &AudioClip, spec: &AugmentSpec) -> Result<AudioClip, AugmentError> {
    spec.validate()?;
    let mut out = if spec.rt60_s > 0.0 {
        add_reverb(clip, spec.rt60_s, hash64(spec.seed, 0x7265_7662))?
    } else {
        clip.clone()
    };
    if let Some(source) = &spec.noise {
        let noise = noise_for(spec, source, out.len(), out.sample_rate())?;
        out = mix_noise(&out, &noise, spec.target_snr_db)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::mean_power;
    use std::f64::consts::TAU;

    fn tone(seconds: f64, rate: u32, amp: f64) -> AudioClip {
        let n = (seconds * rate as f64) as usize;
        let s = (0..n)
            .map(|i| (amp * (TAU * 220.0 * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    fn snr(m: &Mixture) -> f64 {
        10.0 * (mean_power(&m.signal) / mean_power(&m.noise)).log10()
    }

    #[test]
    fn hits_target_snr() {
        let clip = tone(1.0, 16_000, 0.5);
        let noise = white_noise(7_000, 16_000, 3).unwrap();
        for target in [0.0, 10.0, 20.0, 40.0] {
            let m = mix_noise_components(&clip, &noise, target).unwrap();
            assert!((snr(&m) - target).abs() < 0.1, "{target} -> {}", snr(&m));
            assert!(m.mixed.peak() <= 1.0);
        }
    }

    #[test]
    fn joint_scaling_preserves_ratio() {
        let clip = tone(0.5, 16_000, 0.99);
        let noise = white_noise(8_000, 16_000, 9).unwrap();
        let m = mix_noise_components(&clip, &noise, 0.0).unwrap();
        assert!(m.mixed.peak() <= 1.0);
        assert!((snr(&m)).abs() < 0.1);
    }

    #[test]
    fn huge_snr_is_nearly_identity() {
        let clip = tone(0.5, 16_000, 0.5);
        let noise = white_noise(100, 16_000, 1).unwrap();
        let out = mix_noise(&clip, &noise, 200.0).unwrap();
        let diff = out
            .samples()
            .iter()
            .zip(clip.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-6);
    }

    #[test]
    fn silent_inputs_rejected() {
        let silent = AudioClip::silence(100, 16_000).unwrap();
        let noise = white_noise(100, 16_000, 1).unwrap();
        assert!(matches!(mix_noise(&silent, &noise, 10.0), Err(AugmentError::SilentInput("signal"))));
        assert!(matches!(mix_noise(&noise, &silent, 10.0), Err(AugmentError::SilentInput("noise"))));
    }

    #[test]
    fn reverb_length_and_identity() {
        let clip = tone(1.0, 16_000, 0.3);
        let out = add_reverb(&clip, 0.5, 4).unwrap();
        assert_eq!(out.len(), 16_000 + 8_000 - 1);

        let mut impulse = vec![0.0f32; 1];
        impulse[0] = 1.0;
        let imp = AudioClip::new(impulse, 16_000).unwrap();
        let out = add_reverb(&imp, 0.25, 11).unwrap();
        let ir = impulse_response(0.25, 16_000, 11);
        assert_eq!(out.len(), ir.len());
        for (a, b) in out.samples().iter().zip(&ir) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(add_reverb(&clip, 0.5, 4).unwrap(), add_reverb(&clip, 0.5, 4).unwrap());
    }

    #[test]
    fn spec_validation() {
        assert!(AugmentSpec { rt60_s: 3.5, ..Default::default() }.validate().is_err());
        assert!(AugmentSpec { target_snr_db: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(AugmentSpec::default().validate().is_ok());
        let spec: AugmentSpec = toml::from_str("noise = { kind = \"file\", path = \"n.wav\" }\nrt60_s = 0.4").unwrap();
        assert_eq!(spec.noise, Some(NoiseSource::File("n.wav".into())));
        let spec: AugmentSpec = toml::from_str("noise = { kind = \"white\" }").unwrap();
        assert_eq!(spec.noise, Some(NoiseSource::White));
    }

    #[test]
    fn apply_is_deterministic_and_bounded() {
        let clip = tone(0.5, 16_000, 0.8);
        let spec = AugmentSpec {
            rt60_s: 0.3,
            target_snr_db: 5.0,
            seed: 42,
            ..Default::default()
        };
        let a = apply(&clip, &spec).unwrap();
        assert_eq!(a, apply(&clip, &spec).unwrap());
        assert!(a.peak() <= 1.0);
    }
}
