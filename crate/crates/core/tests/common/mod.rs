#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use convoforge::persona::PersonaRegistry;
use convoforge::pipeline::RunConfig;

pub const PERSONAS_TOML: &str = include_str!("../../../../configs/personas.toml");

pub fn registry() -> PersonaRegistry {
    PersonaRegistry::from_toml_str(PERSONAS_TOML).expect("bundled personas load")
}

/// Mock-backend run configuration writing to `out`.
pub fn mock_config(out: &Path, count: u64, seed: u64, workers: usize) -> RunConfig {
    RunConfig {
        output: out.to_path_buf(),
        count,
        seed,
        workers,
        ..RunConfig::default()
    }
}

/// Relative path -> SHA-256 of every file under `root`.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                let digest = Sha256::digest(fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(rel, hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Tone bursts of `on_s` seconds separated by `off_s` seconds of silence.
pub fn gated_tone(freq: f64, amp: f64, on_s: f64, off_s: f64, total_s: f64, rate: u32) -> Vec<f32> {
    let r = rate as f64;
    let period = on_s + off_s;
    (0..(total_s * r).round() as usize)
        .map(|i| {
            let t = i as f64 / r;
            if t % period < on_s {
                (amp * (TAU * freq * t).sin()) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Hann-windowed DFT magnitude of `x` at frequency `f`.
fn dft_magnitude(x: &[f64], f: f64, rate: f64) -> f64 {
    let step = Complex::from_polar(1.0, -TAU * f / rate);
    let mut phasor = Complex::new(1.0, 0.0);
    let mut acc = Complex::new(0.0, 0.0);
    for &v in x {
        acc += phasor * v;
        phasor *= step;
    }
    acc.norm()
}

/// Fundamental frequency of a harmonic signal whose strongest partial in the
/// 60 to 400 Hz band is the fundamental: FFT argmax for a coarse estimate,
/// then a shrinking grid search of the windowed DFT around it.
pub fn f0_oracle(samples: &[f32], sample_rate: u32) -> f64 {
    let rate = sample_rate as f64;
    let n = samples.len();
    let windowed: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| s as f64 * 0.5 * (1.0 - (TAU * i as f64 / (n - 1) as f64).cos()))
        .collect();

    let size = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = windowed.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(size).process(&mut buf);
    let bin_hz = rate / size as f64;
    let lo = (60.0 / bin_hz).floor() as usize;
    let hi = (400.0 / bin_hz).ceil() as usize;
    let peak = (lo..=hi).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();

    let mut center = peak as f64 * bin_hz;
    let mut step = bin_hz / 2.0;
    while step > 1e-3 {
        let best = (-5..=5)
            .map(|k| center + k as f64 * step)
            .max_by(|&a, &b| {
                dft_magnitude(&windowed, a, rate).total_cmp(&dft_magnitude(&windowed, b, rate))
            })
            .unwrap();
        center = best;
        step /= 5.0;
    }
    center
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn power(x: &[f32]) -> f64 {
    x.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / x.len() as f64
}

/// Pure tone with no silence anywhere.
pub fn tone(freq: f64, amp: f64, seconds: f64, rate: u32) -> Vec<f32> {
    let r = rate as f64;
    (0..(seconds * r).round() as usize)
        .map(|i| (amp * (2.0 * PI * freq * i as f64 / r).sin()) as f32)
        .collect()
}
