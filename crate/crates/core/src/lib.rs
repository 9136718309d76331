//! Synthetic multi-speaker conversation datasets.
//!
//! Personas seed a few-shot prompt; a language model writes a marker-format
//! dialogue; each persona gets one fixed reference voice which is cloned for
//! every turn; the rendered turns are concatenated into a conversation WAV
//! with a diarization ground-truth CSV.

pub mod assemble;
pub mod audio;
pub mod augment;
pub mod llm;
pub mod manifest;
pub mod metrics;
pub mod multipart;
pub mod persona;
pub mod pipeline;
pub mod prompt;
pub mod script;
pub mod seed;
pub mod tts_service;
pub mod voice;
