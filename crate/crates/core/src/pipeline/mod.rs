//! End-to-end dataset generation and the dataset-level passes built on it
//! (validation, statistics, re-augmentation, language-model benchmark).

mod config;
mod generate;
mod report;
mod validate;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{BackendKind, LlmSettings, RunConfig, TtsSettings, DEFAULT_COUNT, VOICES_DIR};
pub use generate::{conversation_seed, run_generate, run_generate_with, STAGING_DIR};
pub use report::{FailureSummary, RunReport};
pub use validate::{
    run_augment, run_bench_llm, run_stats, run_validate, ValidationSummary, Violation,
};

use crate::assemble::AssembleError;
use crate::augment::AugmentError;
use crate::llm::LlmError;
use crate::manifest::ManifestError;
use crate::metrics::MetricsError;
use crate::persona::PersonaError;
use crate::voice::VoiceError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("output directory {0} already holds a dataset (use overwrite to replace it)")]
    OutputExists(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("voice profiles: {0}")]
    Voice(#[from] VoiceError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
