//! Dataset-level index (`manifest.json`) and per-conversation metadata
//! (`meta.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "meta.json";
pub const DIALOGUE_FILE: &str = "dialogue.jsonl";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate conversation id {0}")]
    DuplicateId(String),
    #[error("successful conversation {0} has non-positive duration")]
    NonPositiveDuration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    /// `count` conversations are attempted; failures are dropped.
    #[default]
    Attempts,
    /// Keep attempting until `count` conversations succeed.
    Successes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceEntry {
    pub persona: String,
    pub style_hash: String,
    pub seed: u64,
    pub fingerprint: String,
    /// Relative to the dataset root when the cache lives inside it.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub conv_id: String,
    pub seed: u64,
    pub roster: Vec<String>,
    pub success: bool,
    /// Language-model attempts spent on this conversation.
    pub llm_attempts: u32,
    pub turn_count: usize,
    pub duration_s: f64,
    pub samples: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wav: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dialogue: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub augmented: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    pub raw: Option<String>,
    pub issues: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transport_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedGeneration {
    pub conv_id: String,
    pub seed: u64,
    pub roster: Vec<String>,
    /// Stage that failed: `text`, `speech`, `assembly` or `augment`.
    pub stage: String,
    pub reasons: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub attempts: Vec<AttemptLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub master_seed: u64,
    /// Content hash of the persona file.
    pub personas_hash: String,
    pub sample_rate: u32,
    pub gap_s: f64,
    pub count_mode: CountMode,
    pub requested_count: u64,
    pub llm: String,
    pub tts: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub augment: Option<AugmentSpec>,
    pub voices: Vec<VoiceEntry>,
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<FailedGeneration>,
}

impl DatasetManifest {
    pub fn attempts(&self) -> usize {
        self.entries.len()
    }

    pub fn successes(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.success)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.conv_id.as_str()) {
                return Err(ManifestError::DuplicateId(e.conv_id.clone()));
            }
            if e.success && !(e.duration_s > 0.0) {
                return Err(ManifestError::NonPositiveDuration(e.conv_id.clone()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Per-conversation metadata kept next to the audio so the dataset can be
/// re-indexed from disk alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationMeta {
    pub conv_id: String,
    pub seed: u64,
    pub roster: Vec<String>,
    pub llm_attempts: u32,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ManifestError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ManifestError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    fs::write(path, s).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_manifest(dataset_dir: &Path) -> Result<DatasetManifest, ManifestError> {
    let m: DatasetManifest = read_json(&dataset_dir.join(MANIFEST_FILE))?;
    m.validate()?;
    Ok(m)
}

pub fn load_meta(conv_dir: &Path) -> Result<ConversationMeta, ManifestError> {
    read_json(&conv_dir.join(META_FILE))
}

/// `path` relative to `root`, with `/` separators. Falls back to the path
/// itself when it is not under `root`.
pub fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
