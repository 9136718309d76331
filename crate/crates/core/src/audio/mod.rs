//! Mono PCM audio buffers and the WAV profile used on disk.

mod wav;

pub use wav::{decode_wav, encode_wav, read_wav, write_wav, WavError, WAV_HEADER_LEN};

use thiserror::Error;

pub const SUPPORTED_SAMPLE_RATES: [u32; 5] = [16_000, 22_050, 24_000, 44_100, 48_000];
pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;

/// Full-scale value of a 16-bit sample.
pub const I16_SCALE: f64 = 32767.0;

#[derive(Debug, Error, PartialEq)]
pub enum AudioError {
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedSampleRate(u32),
    #[error("sample {index} is {value}, outside [-1, 1]")]
    SampleOutOfRange { index: usize, value: f32 },
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    MixedSampleRates(u32, u32),
}

/// Mono samples in [-1, 1] at one of the supported rates.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if !SUPPORTED_SAMPLE_RATES.contains(&sample_rate) {
            return Err(AudioError::UnsupportedSampleRate(sample_rate));
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(-1.0..=1.0).contains(*s))
        {
            return Err(AudioError::SampleOutOfRange { index, value });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Mean squared sample value; zero for an empty clip.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Snap every sample to the 16-bit grid, i.e. what a WAV write/read
    /// round trip would produce.
    pub fn quantized(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&s| dequantize(quantize(s)))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub fn mean_power(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64
}

/// Float to 16-bit PCM, rounding half away from zero.
pub fn quantize(sample: f32) -> i16 {
    (sample as f64 * I16_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize(sample: i16) -> f32 {
    (sample as f32 / I16_SCALE as f32).max(-1.0)
}

/// Scale a buffer so its peak is exactly 1.0 if it exceeds full scale.
/// Returns the gain applied.
pub fn normalize_if_clipping(samples: &mut [f32]) -> f32 {
    let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak <= 1.0 {
        return 1.0;
    }
    let gain = 1.0 / peak;
    for s in samples.iter_mut() {
        *s = (*s * gain).clamp(-1.0, 1.0);
    }
    gain
}
