use std::fs;
use std::path::{Path, PathBuf};

use super::{Fingerprint, VoiceError};
use crate::audio::{decode_wav, encode_wav, AudioClip};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub persona: String,
    pub style_hash: u64,
    pub seed: u64,
    pub sample_rate: u32,
}

impl CacheKey {
    pub fn stem(&self) -> String {
        format!("{}.{:016x}.{}", self.persona, self.style_hash, self.seed)
    }
}

/// Reference clips on disk as `{persona}.{stylehash}.{seed}.wav`, each with a
/// `.fingerprint` sidecar holding the hex content hash.
#[derive(Debug, Clone)]
pub struct VoiceCache {
    dir: PathBuf,
}

pub const FINGERPRINT_EXT: &str = "fingerprint";

impl VoiceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn wav_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.wav", key.stem()))
    }

    pub fn fingerprint_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.{FINGERPRINT_EXT}", key.stem()))
    }

    /// A clip at a different sample rate counts as a miss.
    pub fn load(&self, key: &CacheKey) -> Result<Option<(AudioClip, Fingerprint)>, VoiceError> {
        let wav = self.wav_path(key);
        if !wav.exists() {
            return Ok(None);
        }
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| VoiceError::Cache { path, source }
        };
        let bytes = fs::read(&wav).map_err(io(&wav))?;
        let clip = decode_wav(&bytes)?;
        if clip.sample_rate() != key.sample_rate {
            return Ok(None);
        }
        let sidecar = self.fingerprint_path(key);
        let stored = fs::read_to_string(&sidecar).map_err(io(&sidecar))?;
        let fp = Fingerprint::of(&clip);
        if Fingerprint::parse(&stored) != Some(fp) {
            return Err(VoiceError::CacheCorrupt { path: wav });
        }
        Ok(Some((clip, fp)))
    }

    pub fn store(
        &self,
        key: &CacheKey,
        clip: &AudioClip,
        fingerprint: Fingerprint,
    ) -> Result<(), VoiceError> {
        let io = |path: PathBuf| move |source| VoiceError::Cache { path, source };
        fs::create_dir_all(&self.dir).map_err(io(self.dir.clone()))?;
        let wav = self.wav_path(key);
        let tmp = wav.with_extension("wav.tmp");
        fs::write(&tmp, encode_wav(clip)).map_err(io(tmp.clone()))?;
        fs::rename(&tmp, &wav).map_err(io(wav.clone()))?;
        let sidecar = self.fingerprint_path(key);
        fs::write(&sidecar, format!("{fingerprint}\n")).map_err(io(sidecar.clone()))?;
        Ok(())
    }

    /// Check every cached clip against its sidecar. Returns the paths that
    /// fail, with a reason.
    pub fn verify(&self) -> Result<Vec<(PathBuf, String)>, VoiceError> {
        let mut bad = Vec::new();
        if !self.dir.exists() {
            return Ok(bad);
        }
        let entries = fs::read_dir(&self.dir).map_err(|source| VoiceError::Cache {
            path: self.dir.clone(),
            source,
        })?;
        let mut wavs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "wav"))
            .collect();
        wavs.sort();
        for wav in wavs {
            let sidecar = wav.with_extension(FINGERPRINT_EXT);
            let clip = match fs::read(&wav).map_err(|e| e.to_string()).and_then(|b| {
                decode_wav(&b).map_err(|e| e.to_string())
            }) {
                Ok(c) => c,
                Err(e) => {
                    bad.push((wav, format!("unreadable: {e}")));
                    continue;
                }
            };
            match fs::read_to_string(&sidecar) {
                Ok(s) if Fingerprint::parse(&s) == Some(Fingerprint::of(&clip)) => {}
                Ok(_) => bad.push((wav, "fingerprint mismatch".into())),
                Err(e) => bad.push((wav, format!("missing fingerprint sidecar: {e}"))),
            }
        }
        Ok(bad)
    }
}
