use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::audio::SUPPORTED_SAMPLE_RATES;
use crate::augment::AugmentSpec;
use crate::llm::{HttpLlm, LlmBackend, LlmBackendConfig, MalformationPolicy, MockLlm};
use crate::manifest::CountMode;
use crate::voice::{HttpVoice, MockVoice, VoiceBackend};

pub const DEFAULT_COUNT: u64 = 200;
pub const VOICES_DIR: &str = "voices";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSettings {
    pub backend: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub temperature: f64,
    pub mock_seed: u64,
    /// Probability that a mock response is malformed.
    pub mock_malformed_rate: f64,
    /// Conversation indices whose every mock response is malformed; takes
    /// precedence over the rate when non-empty.
    pub mock_malformed_conversations: Vec<u64>,
    pub mock_latency_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let http = LlmBackendConfig::default();
        Self {
            backend: BackendKind::Mock,
            endpoint: http.endpoint,
            model: http.model,
            timeout_s: http.timeout_s,
            max_retries: http.max_retries,
            temperature: http.temperature,
            mock_seed: 0,
            mock_malformed_rate: 0.0,
            mock_malformed_conversations: Vec::new(),
            mock_latency_ms: 0,
        }
    }
}

impl LlmSettings {
    pub fn http_config(&self) -> LlmBackendConfig {
        LlmBackendConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            timeout_s: self.timeout_s,
            max_retries: self.max_retries,
            temperature: self.temperature,
        }
    }

    pub fn policy(&self) -> MalformationPolicy {
        if !self.mock_malformed_conversations.is_empty() {
            MalformationPolicy::Conversations(
                self.mock_malformed_conversations.iter().copied().collect::<BTreeSet<_>>(),
            )
        } else if self.mock_malformed_rate > 0.0 {
            MalformationPolicy::Rate(self.mock_malformed_rate)
        } else {
            MalformationPolicy::Never
        }
    }

    pub fn describe(&self) -> String {
        match self.backend {
            BackendKind::Mock => format!("mock(seed={}, policy={:?})", self.mock_seed, self.policy()),
            BackendKind::Http => format!("http({} @ {})", self.model, self.endpoint),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn LlmBackend>, PipelineError> {
        let config = self.http_config();
        config.validate()?;
        Ok(match self.backend {
            BackendKind::Mock => {
                if !(0.0..=1.0).contains(&self.mock_malformed_rate) {
                    return Err(PipelineError::Config(format!(
                        "mock_malformed_rate must be within [0, 1], got {}",
                        self.mock_malformed_rate
                    )));
                }
                Arc::new(
                    MockLlm::new(self.mock_seed, self.policy())
                        .with_latency(Duration::from_millis(self.mock_latency_ms)),
                )
            }
            BackendKind::Http => Arc::new(HttpLlm::new(config)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtsSettings {
    pub backend: BackendKind,
    pub url: String,
    pub timeout_s: f64,
}

impl Default for TtsSettings {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            url: "http://localhost:8020".into(),
            timeout_s: 600.0,
        }
    }
}

impl TtsSettings {
    pub fn describe(&self) -> String {
        match self.backend {
            BackendKind::Mock => "mock".into(),
            BackendKind::Http => format!("http({})", self.url),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn VoiceBackend>, PipelineError> {
        Ok(match self.backend {
            BackendKind::Mock => Arc::new(MockVoice::new()),
            BackendKind::Http => {
                if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
                    return Err(PipelineError::Config(format!(
                        "tts timeout must be positive, got {}",
                        self.timeout_s
                    )));
                }
                Arc::new(HttpVoice::new(&self.url, Duration::from_secs_f64(self.timeout_s)))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub personas: PathBuf,
    pub output: PathBuf,
    pub count: u64,
    pub seed: u64,
    pub workers: usize,
    pub count_mode: CountMode,
    /// Cap on attempts in `successes` mode. Defaults to ten times `count`.
    pub max_attempts: Option<u64>,
    pub sample_rate: u32,
    pub gap_s: f64,
    pub voice_seed: u64,
    /// Defaults to `{output}/voices`.
    pub voice_cache: Option<PathBuf>,
    /// Replace an existing dataset in `output`.
    pub overwrite: bool,
    pub llm: LlmSettings,
    pub tts: TtsSettings,
    pub augment: Option<AugmentSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            personas: PathBuf::from("personas.toml"),
            output: PathBuf::from("dataset"),
            count: DEFAULT_COUNT,
            seed: 0,
            workers: 1,
            count_mode: CountMode::Attempts,
            max_attempts: None,
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            gap_s: 0.0,
            voice_seed: 0,
            voice_cache: None,
            overwrite: false,
            llm: LlmSettings::default(),
            tts: TtsSettings::default(),
            augment: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Relative paths in the file are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.personas);
        resolve(&mut config.output);
        if let Some(c) = config.voice_cache.as_mut() {
            resolve(c);
        }
        if let Some(spec) = config.augment.as_mut() {
            if let Some(crate::augment::NoiseSource::File(p)) = spec.noise.as_mut() {
                resolve(p);
            }
        }
        Ok(config)
    }

    pub fn voice_cache_dir(&self) -> PathBuf {
        self.voice_cache
            .clone()
            .unwrap_or_else(|| self.output.join(VOICES_DIR))
    }

    pub fn attempt_cap(&self) -> u64 {
        self.max_attempts.unwrap_or(self.count.saturating_mul(10))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !SUPPORTED_SAMPLE_RATES.contains(&self.sample_rate) {
            return bad(format!(
                "sample rate {} is not one of {SUPPORTED_SAMPLE_RATES:?}",
                self.sample_rate
            ));
        }
        if !(self.gap_s.is_finite() && self.gap_s >= 0.0) {
            return bad(format!("gap_s must be a non-negative number, got {}", self.gap_s));
        }
        if self.count_mode == CountMode::Successes && self.attempt_cap() < self.count {
            return bad(format!(
                "max_attempts {} is below count {}",
                self.attempt_cap(),
                self.count
            ));
        }
        self.llm.http_config().validate()?;
        if let Some(spec) = &self.augment {
            spec.validate()?;
        }
        Ok(())
    }
}
