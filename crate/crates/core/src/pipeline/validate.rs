use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{augment_conversation, augmented_filename};
use super::{io_err, PipelineError, RunConfig};
use crate::assemble::{
    check_contiguity, gap_samples, read_ground_truth_csv, GroundTruthRecord, Timestamp,
    GROUND_TRUTH_FILE,
};
use crate::audio::{read_wav, write_wav, AudioClip};
use crate::augment::AugmentSpec;
use crate::llm::{benchmark, BenchmarkReport};
use crate::manifest::{
    load_manifest, relative, DatasetManifest, ManifestEntry, MANIFEST_FILE, META_FILE,
};
use crate::metrics::{dataset_report, DatasetReport};
use crate::persona::load_registry;
use crate::voice::{Fingerprint, VoiceCache};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub file: String,
    /// 1-based CSV data row or JSONL line, when the problem is row-specific.
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{} row {}: {}", self.file, r, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub conversations_checked: usize,
    pub files_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationSummary {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Default)]
struct Findings {
    files: usize,
    violations: Vec<Violation>,
}

impl Findings {
    fn push(&mut self, file: &str, row: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            file: file.to_string(),
            row,
            message: message.into(),
        });
    }

    fn wav(&mut self, root: &Path, rel: &str) -> Option<AudioClip> {
        self.files += 1;
        match read_wav(root.join(rel)) {
            Ok(c) => Some(c),
            Err(e) => {
                self.push(rel, None, format!("unreadable WAV: {e}"));
                None
            }
        }
    }
}

fn check_dialogue(root: &Path, rel: &str, records: &[GroundTruthRecord], f: &mut Findings) {
    f.files += 1;
    let text = match fs::read_to_string(root.join(rel)) {
        Ok(t) => t,
        Err(e) => return f.push(rel, None, format!("unreadable: {e}")),
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != records.len() {
        f.push(
            rel,
            None,
            format!("{} dialogue lines but {} ground-truth rows", lines.len(), records.len()),
        );
    }
    for (i, line) in lines.iter().enumerate() {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                f.push(rel, Some(i + 1), format!("invalid JSON: {e}"));
                continue;
            }
        };
        let keys: BTreeSet<&str> = value
            .as_object()
            .map(|o| o.keys().map(String::as_str).collect())
            .unwrap_or_default();
        if keys != BTreeSet::from(["dialogue", "name"]) {
            f.push(rel, Some(i + 1), "record must have exactly the keys name and dialogue");
            continue;
        }
        if let Some(r) = records.get(i) {
            if value["name"].as_str() != Some(r.speaker.as_str()) {
                f.push(
                    rel,
                    Some(i + 1),
                    format!("speaker {} does not match ground truth {}", value["name"], r.speaker),
                );
            }
        }
    }
}

fn check_entry(root: &Path, manifest: &DatasetManifest, e: &ManifestEntry) -> (Vec<GroundTruthRecord>, Findings) {
    let mut f = Findings::default();
    let (Some(wav_rel), Some(csv_rel)) = (e.wav.as_deref(), e.csv.as_deref()) else {
        f.push(MANIFEST_FILE, None, format!("conversation {} lacks wav or csv path", e.conv_id));
        return (Vec::new(), f);
    };
    let clip = f.wav(root, wav_rel);
    if let Some(c) = &clip {
        if c.len() as u64 != e.samples {
            f.push(wav_rel, None, format!("{} samples, manifest says {}", c.len(), e.samples));
        }
        if c.sample_rate() != manifest.sample_rate {
            f.push(wav_rel, None, format!("sample rate {} != {}", c.sample_rate(), manifest.sample_rate));
        }
    }

    f.files += 1;
    let records = match read_ground_truth_csv(root.join(csv_rel)) {
        Ok(r) => r,
        Err(err) => {
            f.push(csv_rel, None, format!("unreadable CSV: {err}"));
            return (Vec::new(), f);
        }
    };
    for v in check_contiguity(&records, manifest.gap_s) {
        f.push(csv_rel, Some(v.row), v.message);
    }
    let expected_name = format!("{}.wav", e.conv_id);
    let roster: BTreeSet<&str> = e.roster.iter().map(String::as_str).collect();
    for (i, r) in records.iter().enumerate() {
        if r.filename != expected_name {
            f.push(csv_rel, Some(i + 1), format!("filename {} should be {expected_name}", r.filename));
        }
        if !roster.contains(r.speaker.as_str()) {
            f.push(csv_rel, Some(i + 1), format!("speaker {} is not in the roster", r.speaker));
        }
    }
    if records.len() != e.turn_count {
        f.push(csv_rel, None, format!("{} rows, manifest says {} turns", records.len(), e.turn_count));
    }
    if let (Some(c), Some(last)) = (&clip, records.last()) {
        let duration = Timestamp::from_samples(c.len() as u64, c.sample_rate());
        if last.end != duration {
            f.push(
                csv_rel,
                Some(records.len()),
                format!("last end {} does not match audio duration {duration}", last.end),
            );
        }
    }

    if !e.segments.is_empty() {
        if e.segments.len() != records.len() {
            f.push(
                csv_rel,
                None,
                format!("{} segment files for {} rows", e.segments.len(), records.len()),
            );
        }
        let rate = manifest.sample_rate;
        let gap = gap_samples(manifest.gap_s, rate) as u64;
        let mut pos = 0u64;
        let mut all_read = true;
        for (i, seg_rel) in e.segments.iter().enumerate() {
            let Some(seg) = f.wav(root, seg_rel) else {
                all_read = false;
                continue;
            };
            if i > 0 {
                pos += gap;
            }
            let (start, end) = (
                Timestamp::from_samples(pos, rate),
                Timestamp::from_samples(pos + seg.len() as u64, rate),
            );
            pos += seg.len() as u64;
            if let Some(r) = records.get(i) {
                if (r.start, r.end) != (start, end) {
                    f.push(
                        csv_rel,
                        Some(i + 1),
                        format!("row spans {}-{} but {seg_rel} spans {start}-{end}", r.start, r.end),
                    );
                }
            }
        }
        if let (true, Some(c)) = (all_read, &clip) {
            if pos != c.len() as u64 {
                f.push(
                    wav_rel,
                    None,
                    format!("segments and gaps add up to {pos} samples, file has {}", c.len()),
                );
            }
        }
    }

    if let Some(d) = e.dialogue.as_deref() {
        check_dialogue(root, d, &records, &mut f);
    }
    if let Some(a) = e.augmented.as_deref() {
        f.wav(root, a);
    }
    (records, f)
}

/// Re-check every on-disk invariant of a generated dataset.
pub fn run_validate(root: &Path) -> Result<ValidationSummary, PipelineError> {
    let manifest = load_manifest(root)?;
    let ok: Vec<&ManifestEntry> = manifest.successes().collect();
    let checked: Vec<(Vec<GroundTruthRecord>, Findings)> =
        ok.par_iter().map(|e| check_entry(root, &manifest, e)).collect();

    let mut summary = ValidationSummary {
        conversations_checked: ok.len(),
        ..Default::default()
    };
    let mut merged_expected = Vec::new();
    for (records, f) in checked {
        summary.files_checked += f.files;
        summary.violations.extend(f.violations);
        merged_expected.extend(records);
    }
    let mut f = Findings::default();

    f.files += 1;
    match read_ground_truth_csv(root.join(GROUND_TRUTH_FILE)) {
        Ok(merged) => {
            for v in check_contiguity(&merged, manifest.gap_s) {
                f.push(GROUND_TRUTH_FILE, Some(v.row), v.message);
            }
            if merged != merged_expected {
                f.push(
                    GROUND_TRUTH_FILE,
                    None,
                    "merged ground truth differs from the per-conversation files",
                );
            }
        }
        Err(e) => f.push(GROUND_TRUTH_FILE, None, format!("unreadable CSV: {e}")),
    }

    let mut cache_dirs = BTreeSet::new();
    for v in &manifest.voices {
        let path = root.join(&v.file);
        if let Some(dir) = path.parent() {
            cache_dirs.insert(dir.to_path_buf());
        }
        let Some(clip) = f.wav(root, &v.file) else {
            continue;
        };
        if Fingerprint::parse(&v.fingerprint) != Some(Fingerprint::of(&clip)) {
            f.push(&v.file, None, format!("voice of {} does not match its recorded fingerprint", v.persona));
        }
    }
    for dir in cache_dirs {
        for (path, reason) in VoiceCache::new(&dir).verify()? {
            f.push(&relative(root, &path), None, reason);
        }
    }

    let listed: BTreeSet<&str> = manifest.entries.iter().map(|e| e.conv_id.as_str()).collect();
    let mut strays: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .filter(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            !listed.contains(name.as_ref())
        })
        .collect();
    strays.sort();
    for p in strays {
        f.push(&relative(root, &p), None, "conversation directory is not listed in the manifest");
    }

    summary.files_checked += f.files;
    summary.violations.extend(f.violations);
    Ok(summary)
}

pub fn run_stats(root: &Path) -> Result<DatasetReport, PipelineError> {
    let manifest = load_manifest(root)?;
    Ok(dataset_report(root, &manifest.entries, manifest.attempts())?)
}

/// Write `{id}_augmented.wav` next to every conversation and record the augmentation settings
/// in the manifest. Clean audio and ground truth are left untouched.
pub fn run_augment(root: &Path, spec: &AugmentSpec, workers: usize) -> Result<usize, PipelineError> {
    spec.validate()?;
    let mut manifest = load_manifest(root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let written: Vec<Option<String>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| -> Result<Option<String>, PipelineError> {
                let (true, Some(wav_rel)) = (e.success, e.wav.as_deref()) else {
                    return Ok(None);
                };
                let wav = root.join(wav_rel);
                let clip = read_wav(&wav).map_err(crate::assemble::AssembleError::from)?;
                let out = augment_conversation(spec, &e.conv_id, &clip)?;
                let dir = wav.parent().unwrap_or(root);
                let dest = dir.join(augmented_filename(&e.conv_id));
                let tmp = dest.with_extension("wav.tmp");
                write_wav(&out, &tmp).map_err(crate::assemble::AssembleError::from)?;
                fs::rename(&tmp, &dest).map_err(io_err(&dest))?;
                Ok(Some(relative(root, &dest)))
            })
            .collect::<Result<_, _>>()
    })?;
    let count = written.iter().flatten().count();
    for (e, w) in manifest.entries.iter_mut().zip(written) {
        if w.is_some() {
            e.augmented = w;
        }
    }
    manifest.augment = Some(spec.clone());
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, manifest.to_json()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(count)
}

pub fn run_bench_llm(config: &RunConfig, n: usize) -> Result<BenchmarkReport, PipelineError> {
    let registry = load_registry(&config.personas)?;
    let llm = config.llm.build()?;
    Ok(benchmark(llm.as_ref(), &registry, n, config.seed)?)
}
