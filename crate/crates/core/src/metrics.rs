//! Dataset statistics: speaker-count distribution, speaker appearances,
//! duration totals and blind SNR estimation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assemble::{read_ground_truth_csv, AssembleError, GroundTruthRecord, GROUND_TRUTH_FILE};
use crate::audio::{read_wav, AudioClip, WavError};
use crate::manifest::{load_meta, relative, ManifestEntry, ManifestError, DIALOGUE_FILE, META_FILE};

pub const SNR_CAP_DB: f64 = 100.0;
pub const MIN_SNR_SECONDS: f64 = 0.1;
const FRAME_S: f64 = 0.025;
const HOP_S: f64 = 0.010;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("clip of {seconds:.3} s is too short for SNR estimation (need {MIN_SNR_SECONDS} s)")]
    TooShort { seconds: f64 },
    #[error("manifest has no successful conversations")]
    EmptyManifest,
    #[error("conversation {conv_id}: {source}")]
    Csv {
        conv_id: String,
        #[source]
        source: AssembleError,
    },
    #[error("conversation {conv_id}: {source}")]
    Wav {
        conv_id: String,
        #[source]
        source: WavError,
    },
    #[error("conversation {conv_id}: {message}")]
    Entry { conv_id: String, message: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Blind SNR: 25 ms frames every 10 ms; noise power is the mean energy of the
/// quietest tenth of frames, signal power the mean energy of frames from the
/// 20th percentile upward. Capped at 100 dB (also returned for a zero floor).
pub fn estimate_snr(clip: &AudioClip) -> Result<f64, MetricsError> {
    if clip.duration_s() < MIN_SNR_SECONDS {
        return Err(MetricsError::TooShort {
            seconds: clip.duration_s(),
        });
    }
    let rate = clip.sample_rate() as f64;
    let win = (FRAME_S * rate).round() as usize;
    let hop = (HOP_S * rate).round() as usize;
    let x = clip.samples();
    let frames = 1 + (x.len() - win) / hop;
    let mut energies: Vec<f64> = (0..frames)
        .map(|f| {
            let w = &x[f * hop..f * hop + win];
            w.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / win as f64
        })
        .collect();
    energies.sort_by(f64::total_cmp);

    let n_noise = (frames / 10).max(1);
    let noise = energies[..n_noise].iter().sum::<f64>() / n_noise as f64;
    let loud = &energies[frames / 5..];
    let signal = loud.iter().sum::<f64>() / loud.len() as f64;
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    if signal == 0.0 {
        return Ok(0.0);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}

/// Percent of conversations per roster size, one decimal.
pub fn speaker_count_distribution(
    roster_sizes: &[usize],
) -> Result<BTreeMap<usize, f64>, MetricsError> {
    if roster_sizes.is_empty() {
        return Err(MetricsError::EmptyManifest);
    }
    let mut counts = BTreeMap::new();
    for &k in roster_sizes {
        *counts.entry(k).or_insert(0usize) += 1;
    }
    let total = roster_sizes.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, round_to(100.0 * c as f64 / total, 1)))
        .collect())
}

/// Spoken turns per speaker.
pub fn speaker_appearances<'a>(
    records: impl IntoIterator<Item = &'a GroundTruthRecord>,
) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.speaker.clone()).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub mean_db: f64,
    pub min_db: f64,
    pub max_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub conversations: usize,
    pub attempts: usize,
    pub compliance_percent: f64,
    pub total_duration_s: f64,
    pub total_hours: f64,
    pub total_turns: usize,
    /// Roster size → percent of conversations.
    pub speaker_count_distribution: BTreeMap<String, f64>,
    pub speaker_appearances: BTreeMap<String, usize>,
    pub snr_db: SnrSummary,
    /// Conversation id → roster members with no turns.
    pub silent_participants: BTreeMap<String, Vec<String>>,
}

impl DatasetReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "conversations      {}", self.conversations);
        let _ = writeln!(t, "attempts           {}", self.attempts);
        let _ = writeln!(t, "compliance         {:.1}%", self.compliance_percent);
        let _ = writeln!(t, "total duration     {:.2} h ({:.2} s)", self.total_hours, self.total_duration_s);
        let _ = writeln!(t, "total turns        {}", self.total_turns);
        let _ = writeln!(
            t,
            "SNR (dB)           mean {:.2}  min {:.2}  max {:.2}",
            self.snr_db.mean_db, self.snr_db.min_db, self.snr_db.max_db
        );
        let _ = writeln!(t, "\nspeakers per conversation");
        for (k, p) in &self.speaker_count_distribution {
            let _ = writeln!(t, "  {k:<4} {p:>5.1}%");
        }
        let _ = writeln!(t, "\nspeaker appearances");
        for (name, n) in &self.speaker_appearances {
            let _ = writeln!(t, "  {name:<12} {n:>6}");
        }
        if !self.silent_participants.is_empty() {
            let _ = writeln!(t, "\nsilent participants");
            for (id, names) in &self.silent_participants {
                let _ = writeln!(t, "  {id:<6} {}", names.join(", "));
            }
        }
        t
    }
}

struct Scanned {
    conv_id: String,
    roster: Vec<String>,
    records: Vec<GroundTruthRecord>,
    duration_s: f64,
    snr_db: f64,
}

fn scan_entry(root: &Path, e: &ManifestEntry) -> Result<Scanned, MetricsError> {
    let missing = |what: &str| MetricsError::Entry {
        conv_id: e.conv_id.clone(),
        message: format!("manifest entry has no {what} path"),
    };
    let csv = root.join(e.csv.as_deref().ok_or_else(|| missing("csv"))?);
    let wav = root.join(e.wav.as_deref().ok_or_else(|| missing("wav"))?);
    let records = read_ground_truth_csv(&csv).map_err(|source| MetricsError::Csv {
        conv_id: e.conv_id.clone(),
        source,
    })?;
    let clip = read_wav(&wav).map_err(|source| MetricsError::Wav {
        conv_id: e.conv_id.clone(),
        source,
    })?;
    Ok(Scanned {
        conv_id: e.conv_id.clone(),
        roster: e.roster.clone(),
        records,
        duration_s: clip.duration_s(),
        snr_db: estimate_snr(&clip)?,
    })
}

/// Aggregate over the successful entries, reading every CSV and WAV from
/// disk. `attempts` is the number of conversations attempted.
pub fn dataset_report(
    root: &Path,
    entries: &[ManifestEntry],
    attempts: usize,
) -> Result<DatasetReport, MetricsError> {
    let ok: Vec<&ManifestEntry> = entries.iter().filter(|e| e.success).collect();
    if ok.is_empty() {
        return Err(MetricsError::EmptyManifest);
    }
    let scanned = ok
        .par_iter()
        .map(|e| scan_entry(root, e))
        .collect::<Result<Vec<_>, _>>()?;

    let sizes: Vec<usize> = scanned.iter().map(|s| s.roster.len()).collect();
    let distribution = speaker_count_distribution(&sizes)?
        .into_iter()
        .map(|(k, p)| (k.to_string(), p))
        .collect();
    let appearances = speaker_appearances(scanned.iter().flat_map(|s| &s.records));
    let total_turns = scanned.iter().map(|s| s.records.len()).sum();
    let total_duration_s: f64 = scanned.iter().map(|s| s.duration_s).sum();

    let snrs: Vec<f64> = scanned.iter().map(|s| s.snr_db).collect();
    let snr_db = SnrSummary {
        mean_db: snrs.iter().sum::<f64>() / snrs.len() as f64,
        min_db: snrs.iter().copied().fold(f64::INFINITY, f64::min),
        max_db: snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };

    let mut silent = BTreeMap::new();
    for s in &scanned {
        let spoke: BTreeSet<&str> = s.records.iter().map(|r| r.speaker.as_str()).collect();
        let quiet: Vec<String> = s
            .roster
            .iter()
            .filter(|n| !spoke.contains(n.as_str()))
            .cloned()
            .collect();
        if !quiet.is_empty() {
            silent.insert(s.conv_id.clone(), quiet);
        }
    }

    let attempts = attempts.max(scanned.len());
    Ok(DatasetReport {
        conversations: scanned.len(),
        attempts,
        compliance_percent: 100.0 * scanned.len() as f64 / attempts as f64,
        total_duration_s,
        total_hours: round_to(total_duration_s / 3600.0, 2),
        total_turns,
        speaker_count_distribution: distribution,
        speaker_appearances: appearances,
        snr_db,
        silent_participants: silent,
    })
}

/// Rebuild successful manifest entries from conversation directories alone
/// (those holding a `meta.json`), ordered by id.
pub fn rescan(root: &Path) -> Result<Vec<ManifestEntry>, MetricsError> {
    let io = |source| ManifestError::Io {
        path: root.to_path_buf(),
        source,
    };
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort_by_key(|p| {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        (name.parse::<u64>().unwrap_or(u64::MAX), name)
    });

    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let meta = load_meta(&dir)?;
        let wav = dir.join(format!("{}.wav", meta.conv_id));
        let csv = dir.join(GROUND_TRUTH_FILE);
        let clip = read_wav(&wav).map_err(|source| MetricsError::Wav {
            conv_id: meta.conv_id.clone(),
            source,
        })?;
        let records = read_ground_truth_csv(&csv).map_err(|source| MetricsError::Csv {
            conv_id: meta.conv_id.clone(),
            source,
        })?;
        out.push(ManifestEntry {
            conv_id: meta.conv_id,
            seed: meta.seed,
            roster: meta.roster,
            success: true,
            llm_attempts: meta.llm_attempts,
            turn_count: records.len(),
            duration_s: clip.duration_s(),
            samples: clip.len() as u64,
            wav: Some(relative(root, &wav)),
            csv: Some(relative(root, &csv)),
            dialogue: Some(relative(root, &dir.join(DIALOGUE_FILE))),
            augmented: None,
            segments: vec![],
        });
    }
    Ok(out)
}
