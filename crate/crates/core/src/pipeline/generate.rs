use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::report::{FailureSummary, RunReport};
use super::{io_err, PipelineError, RunConfig};
use crate::assemble::{write_conversation, write_ground_truth_csv, GroundTruthRecord, GROUND_TRUTH_FILE};
use crate::audio::{write_wav, AudioClip};
use crate::augment::{self, AugmentSpec};
use crate::llm::{generate_validated, Generation, LlmBackend};
use crate::manifest::{
    relative, write_json, AttemptLog, ConversationMeta, CountMode, DatasetManifest,
    FailedGeneration, ManifestEntry, VoiceEntry, DIALOGUE_FILE, MANIFEST_FILE, MANIFEST_VERSION,
    META_FILE,
};
use crate::metrics::dataset_report;
use crate::persona::{load_registry, Persona, PersonaRegistry};
use crate::prompt::build_prompt;
use crate::seed::{hash64, rng_from_seed, stable_hash, stable_hash_str};
use crate::voice::{CacheKey, VoiceCache};
use crate::voice::{build_voice_profiles, render_script, VoiceBackend, VoiceProfiles};

pub const STAGING_DIR: &str = ".staging";
const ROSTER_STREAM: u64 = 1;

pub fn conversation_seed(master_seed: u64, index: u64) -> u64 {
    hash64(master_seed, index)
}

pub(crate) fn augment_seed(spec_seed: u64, conv_id: &str) -> u64 {
    hash64(spec_seed, stable_hash_str(conv_id))
}

pub(crate) fn augmented_filename(conv_id: &str) -> String {
    format!("{conv_id}_augmented.wav")
}

/// Augment one conversation with a seed tied to its id, so re-augmenting a
/// dataset reproduces what generation would have written.
pub(crate) fn augment_conversation(
    spec: &AugmentSpec,
    conv_id: &str,
    clip: &AudioClip,
) -> Result<AudioClip, crate::augment::AugmentError> {
    let spec = AugmentSpec {
        seed: augment_seed(spec.seed, conv_id),
        ..spec.clone()
    };
    augment::apply(clip, &spec)
}

pub(crate) fn personas_hash(personas: &[Persona]) -> String {
    let canonical = serde_json::to_vec(personas).expect("personas serialize");
    format!("{:016x}", stable_hash(&canonical))
}

struct Context<'a> {
    config: &'a RunConfig,
    registry: &'a PersonaRegistry,
    profiles: &'a VoiceProfiles,
    llm: &'a dyn LlmBackend,
    voice: &'a dyn VoiceBackend,
    root: &'a Path,
    staging: PathBuf,
}

struct Outcome {
    entry: ManifestEntry,
    failure: Option<FailedGeneration>,
    records: Vec<GroundTruthRecord>,
    llm_requests: usize,
    text_s: f64,
    tts_s: f64,
}

fn failed(
    entry: ManifestEntry,
    stage: &str,
    reasons: Vec<String>,
    attempts: Vec<AttemptLog>,
    text_s: f64,
    tts_s: f64,
) -> Outcome {
    log::warn!("conversation {} failed at {stage}: {}", entry.conv_id, reasons.join("; "));
    Outcome {
        failure: Some(FailedGeneration {
            conv_id: entry.conv_id.clone(),
            seed: entry.seed,
            roster: entry.roster.clone(),
            stage: stage.into(),
            reasons,
            attempts,
        }),
        llm_requests: entry.llm_attempts as usize,
        entry,
        records: Vec::new(),
        text_s,
        tts_s,
    }
}

fn attempt_logs(generation: &Generation) -> Vec<AttemptLog> {
    generation
        .attempts()
        .iter()
        .map(|a| AttemptLog {
            attempt: a.attempt,
            raw: a.raw.clone(),
            issues: a.issues.iter().map(|i| i.to_string()).collect(),
            transport_error: a.transport_error.clone(),
        })
        .collect()
}

fn process(ctx: &Context, index: u64) -> Result<Outcome, PipelineError> {
    let config = ctx.config;
    let conv_id = index.to_string();
    let seed = conversation_seed(config.seed, index);
    let roster = ctx
        .registry
        .sample_participants(&mut rng_from_seed(hash64(seed, ROSTER_STREAM)))?;
    let prompt = build_prompt(&roster).map_err(crate::llm::LlmError::from)?;
    let mut entry = ManifestEntry {
        conv_id: conv_id.clone(),
        seed,
        roster: prompt.roster.clone(),
        success: false,
        llm_attempts: 0,
        turn_count: 0,
        duration_s: 0.0,
        samples: 0,
        wav: None,
        csv: None,
        dialogue: None,
        augmented: None,
        segments: Vec::new(),
    };

    let started = Instant::now();
    let generation = generate_validated(
        &prompt,
        &conv_id,
        ctx.llm,
        config.llm.max_retries,
        index,
        seed,
    );
    let generation = match generation {
        Ok(g) => g,
        Err(e) => {
            entry.llm_attempts = config.llm.max_retries + 1;
            let text_s = started.elapsed().as_secs_f64();
            return Ok(failed(entry, "text", vec![e.to_string()], Vec::new(), text_s, 0.0));
        }
    };
    entry.llm_attempts = generation.attempts().len() as u32;
    let text_s = generation.latency_s();
    let logs = attempt_logs(&generation);
    let script = match generation {
        Generation::Valid { script, .. } => script,
        Generation::Failed(record) => {
            return Ok(failed(entry, "text", record.reasons(), logs, text_s, 0.0));
        }
    };

    let started = Instant::now();
    let segments = match render_script(&script, ctx.profiles, ctx.voice, config.sample_rate) {
        Ok(s) => s,
        Err(e) => {
            let tts_s = started.elapsed().as_secs_f64();
            return Ok(failed(entry, "speech", vec![e.to_string()], Vec::new(), text_s, tts_s));
        }
    };
    let tts_s = started.elapsed().as_secs_f64();

    let stage_dir = ctx.staging.join(&conv_id);
    if stage_dir.exists() {
        fs::remove_dir_all(&stage_dir).map_err(io_err(&stage_dir))?;
    }
    fs::create_dir_all(&stage_dir).map_err(io_err(&stage_dir))?;
    let (artifact, clip) = match write_conversation(&stage_dir, &conv_id, &segments, config.gap_s) {
        Ok(a) => a,
        Err(e) => {
            let _ = fs::remove_dir_all(&stage_dir);
            return Ok(failed(entry, "assembly", vec![e.to_string()], Vec::new(), text_s, tts_s));
        }
    };

    let mut dialogue = script.to_json_records().join("\n");
    dialogue.push('\n');
    let dialogue_path = stage_dir.join(DIALOGUE_FILE);
    fs::write(&dialogue_path, dialogue).map_err(io_err(&dialogue_path))?;
    let meta = ConversationMeta {
        conv_id: conv_id.clone(),
        seed,
        roster: prompt.roster.clone(),
        llm_attempts: entry.llm_attempts,
    };
    write_json(&stage_dir.join(META_FILE), &meta)?;

    if let Some(spec) = &config.augment {
        match augment_conversation(spec, &conv_id, &clip) {
            Ok(aug) => write_wav(&aug, stage_dir.join(augmented_filename(&conv_id)))
                .map_err(crate::assemble::AssembleError::from)?,
            Err(e) => {
                let _ = fs::remove_dir_all(&stage_dir);
                return Ok(failed(entry, "augment", vec![e.to_string()], Vec::new(), text_s, tts_s));
            }
        }
    }

    let final_dir = ctx.root.join(&conv_id);
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(io_err(&final_dir))?;
    }
    fs::rename(&stage_dir, &final_dir).map_err(io_err(&final_dir))?;

    let moved = |p: &Path| relative(ctx.root, &final_dir.join(p.strip_prefix(&stage_dir).unwrap_or(p)));
    entry.success = true;
    entry.turn_count = artifact.records.len();
    entry.duration_s = artifact.duration_s();
    entry.samples = artifact.samples as u64;
    entry.wav = Some(moved(&artifact.wav_path));
    entry.csv = Some(moved(&artifact.csv_path));
    entry.dialogue = Some(moved(&dialogue_path));
    entry.segments = artifact.segment_paths.iter().map(|p| moved(p)).collect();
    if config.augment.is_some() {
        entry.augmented = Some(relative(ctx.root, &final_dir.join(augmented_filename(&conv_id))));
    }
    log::info!(
        "conversation {conv_id}: {} turns, {:.2} s",
        entry.turn_count,
        entry.duration_s
    );
    Ok(Outcome {
        llm_requests: entry.llm_attempts as usize,
        entry,
        failure: None,
        records: artifact.records,
        text_s,
        tts_s,
    })
}

fn prepare_output(config: &RunConfig) -> Result<(), PipelineError> {
    let root = &config.output;
    fs::create_dir_all(root).map_err(io_err(root))?;
    if !root.join(MANIFEST_FILE).exists() {
        return Ok(());
    }
    if !config.overwrite {
        return Err(PipelineError::OutputExists(root.clone()));
    }
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let path = entry.map_err(io_err(root))?.path();
        if path.is_dir() && (path.join(META_FILE).exists() || path.ends_with(STAGING_DIR)) {
            fs::remove_dir_all(&path).map_err(io_err(&path))?;
        }
    }
    for name in [MANIFEST_FILE, GROUND_TRUTH_FILE] {
        let path = root.join(name);
        if path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

/// Load personas and build backends from the configuration, then generate.
pub fn run_generate(config: &RunConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let registry = load_registry(&config.personas)?;
    let llm: Arc<dyn LlmBackend> = config.llm.build()?;
    let voice: Arc<dyn VoiceBackend> = config.tts.build()?;
    run_generate_with(config, &registry, llm.as_ref(), voice.as_ref())
}

/// Generate with caller-supplied personas and backends. `config.personas`,
/// `config.llm.backend` and `config.tts.backend` are not consulted.
pub fn run_generate_with(
    config: &RunConfig,
    registry: &PersonaRegistry,
    llm: &dyn LlmBackend,
    voice: &dyn VoiceBackend,
) -> Result<RunReport, PipelineError> {
    let wall = Instant::now();
    config.validate()?;
    prepare_output(config)?;
    let root = config.output.as_path();

    let cache = VoiceCache::new(config.voice_cache_dir());
    let profiles = build_voice_profiles(registry, config.voice_seed, voice, config.sample_rate, Some(&cache))?;
    let voices = profiles
        .values()
        .map(|p| {
            let key = CacheKey {
                persona: p.persona.clone(),
                style_hash: p.style_hash,
                seed: p.seed,
                sample_rate: config.sample_rate,
            };
            VoiceEntry {
                persona: p.persona.clone(),
                style_hash: format!("{:016x}", p.style_hash),
                seed: p.seed,
                fingerprint: p.fingerprint.to_string(),
                file: relative(root, &cache.wav_path(&key)),
            }
        })
        .collect();

    let ctx = Context {
        config,
        registry,
        profiles: &profiles,
        llm,
        voice,
        root,
        staging: root.join(STAGING_DIR),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let run_batch = |range: std::ops::Range<u64>| -> Result<Vec<Outcome>, PipelineError> {
        pool.install(|| range.into_par_iter().map(|i| process(&ctx, i)).collect())
    };

    let mut outcomes: Vec<Outcome> = Vec::new();
    match config.count_mode {
        CountMode::Attempts => outcomes = run_batch(0..config.count)?,
        CountMode::Successes => {
            let cap = config.attempt_cap();
            let mut next = 0u64;
            loop {
                let have = outcomes.iter().filter(|o| o.entry.success).count() as u64;
                if have >= config.count || next >= cap {
                    break;
                }
                let batch = (config.count - have).min(cap - next);
                outcomes.extend(run_batch(next..next + batch)?);
                next += batch;
            }
        }
    }
    if ctx.staging.exists() {
        fs::remove_dir_all(&ctx.staging).map_err(io_err(&ctx.staging))?;
    }

    let merged: Vec<GroundTruthRecord> = outcomes.iter().flat_map(|o| o.records.clone()).collect();
    write_ground_truth_csv(root.join(GROUND_TRUTH_FILE), &merged, config.gap_s)?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        master_seed: config.seed,
        personas_hash: personas_hash(registry.personas()),
        sample_rate: config.sample_rate,
        gap_s: config.gap_s,
        count_mode: config.count_mode,
        requested_count: config.count,
        llm: config.llm.describe(),
        tts: config.tts.describe(),
        augment: config.augment.clone(),
        voices,
        entries: outcomes.iter().map(|o| o.entry.clone()).collect(),
        failures: outcomes.iter().filter_map(|o| o.failure.clone()).collect(),
    };
    manifest.validate()?;
    let manifest_path = root.join(MANIFEST_FILE);
    let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, manifest.to_json()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &manifest_path).map_err(io_err(&manifest_path))?;

    let successes = manifest.successes().count();
    let dataset = if successes > 0 {
        Some(dataset_report(root, &manifest.entries, manifest.attempts())?)
    } else {
        None
    };
    Ok(RunReport {
        attempts: manifest.attempts(),
        successes,
        compliance_percent: 100.0 * successes as f64 / manifest.attempts().max(1) as f64,
        failures: manifest
            .failures
            .iter()
            .map(|f| FailureSummary {
                conv_id: f.conv_id.clone(),
                stage: f.stage.clone(),
                reasons: f.reasons.clone(),
            })
            .collect(),
        llm_requests: outcomes.iter().map(|o| o.llm_requests).sum(),
        text_gen_seconds: outcomes.iter().map(|o| o.text_s).sum(),
        tts_seconds: outcomes.iter().map(|o| o.tts_s).sum(),
        wall_seconds: wall.elapsed().as_secs_f64(),
        workers: config.workers,
        output: root.to_path_buf(),
        dataset,
    })
}
