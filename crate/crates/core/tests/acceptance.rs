//! Acceptance criteria, one line each. Run with
//! `cargo test -p convoforge-core --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;

use convoforge::assemble::{read_ground_truth_csv, write_conversation};
use convoforge::audio::{dequantize, read_wav, write_wav, AudioClip, SUPPORTED_SAMPLE_RATES};
use convoforge::augment::{mix_noise, mix_noise_components, white_noise};
use convoforge::llm::{LlmBackend, Malformation, MalformationPolicy, MockLlm, RequestTag};
use convoforge::manifest::load_manifest;
use convoforge::metrics::{estimate_snr, SNR_CAP_DB};
use convoforge::pipeline::run_generate_with;
use convoforge::prompt::build_prompt;
use convoforge::script::{parse, validate_format, ConversationScript, Turn};
use convoforge::seed::{hash64, rng_from_seed};
use convoforge::voice::{MockVoice, RenderedSegment};

use common::{db, f0_oracle, gated_tone, mean_std, mock_config, power, registry, tree_digest};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reference_table() -> Outcome {
    let started = Instant::now();
    let seg = |speaker: &str, seconds: f64| RenderedSegment {
        speaker: speaker.into(),
        turn_index: 0,
        clip: AudioClip::new(vec![0.2; (seconds * 24_000.0_f64).round() as usize], 24_000).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    let segments = [seg("Grace", 8.35), seg("Eva", 11.39), seg("Grace", 11.09)];
    let (artifact, _) = write_conversation(dir.path(), "92", &segments, 0.0).map_err(|e| e.to_string())?;
    let csv = fs::read_to_string(artifact.csv_path).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let expected = ["92.wav,0.00,8.35,Grace", "92.wav,8.35,19.74,Eva", "92.wav,19.74,30.83,Grace"];
    let elapsed = started.elapsed().as_secs_f64();
    ensure(
        rows == expected && elapsed < 1.0,
        format!("rows {} in {elapsed:.3} s", rows.join(" / ")),
    )
}

fn random_script(seed: u64) -> ConversationScript {
    const WORDS: &[&str] = &[
        "hello", "really?", "I'm", "fine,", "thanks!", "what", "about", "you", "the", "club", "opens",
        "downtown.", "\"quoted\"", "café", "42", "x-ray", "[sic]", "well...", "yes", "no",
    ];
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(2..=5);
    let roster: Vec<String> = (0..n).map(|i| format!("P{i}x{}", rng.gen_range(0..100))).collect();
    let turns = (0..rng.gen_range(1..=30))
        .map(|_| {
            let speaker = roster[rng.gen_range(0..n)].clone();
            let words: Vec<&str> = (0..rng.gen_range(1..=15)).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
            Turn::new(speaker, words.join(" "))
        })
        .collect();
    ConversationScript::new(seed.to_string(), roster, turns).unwrap()
}

fn parser_round_trip() -> Outcome {
    let started = Instant::now();
    let mut round_trips = 0;
    for seed in 0..1000 {
        let script = random_script(seed);
        if parse(&script.serialize(), script.roster(), script.id()).ok().as_ref() == Some(&script) {
            round_trips += 1;
        }
    }
    let registry = registry();
    let mut rejected = 0;
    for i in 0..1000u64 {
        let kind = Malformation::ALL[(i % 4) as usize];
        let llm = MockLlm::new(i, MalformationPolicy::Always(kind));
        let roster = registry.sample_participants(&mut rng_from_seed(i)).unwrap();
        let prompt = build_prompt(&roster).unwrap();
        let raw = llm
            .complete(&prompt.text, &RequestTag { conversation: i, attempt: 0, seed: hash64(1, i) })
            .unwrap();
        if validate_format(&raw, &prompt.roster).codes() == vec![kind.expected_code()] {
            rejected += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure(
        round_trips == 1000 && rejected == 1000 && elapsed < 10.0,
        format!("{round_trips}/1000 round-trips, {rejected}/1000 rejected with the right code, {elapsed:.2} s"),
    )
}

fn stage_direction() -> Outcome {
    let raw = "Sure, here you go!\n\n[CONV_BEGIN]\n\n\
        [Cathy] Did you guys hear about the new comedy club opening up downtown? It's going to be huge!\n\
        [Ben] \\(squinting\\) Really? I hadn't heard. What makes you say that?\n\n[CONV_END]\n";
    let script = parse(raw, &["Cathy", "Ben"], "0").map_err(|e| e.to_string())?;
    let ben = &script.turns()[1].text;
    ensure(ben == "Really? I hadn't heard. What makes you say that?", format!("{ben:?}"))
}

fn determinism() -> Outcome {
    let started = Instant::now();
    let registry = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Rate(0.05));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_generate_with(&mock_config(a.path(), 20, 2024, 1), &registry, &llm, &MockVoice::new())
        .map_err(|e| e.to_string())?;
    run_generate_with(&mock_config(b.path(), 20, 2024, 8), &registry, &llm, &MockVoice::new())
        .map_err(|e| e.to_string())?;
    let (da, db) = (tree_digest(a.path()), tree_digest(b.path()));
    let elapsed = started.elapsed().as_secs_f64();
    let differing = da.iter().filter(|(k, v)| db.get(*k) != Some(v)).count() + db.keys().filter(|k| !da.contains_key(*k)).count();
    ensure(
        differing == 0 && !da.is_empty() && elapsed < 60.0,
        format!("{} files, {differing} differ, both runs in {elapsed:.1} s", da.len()),
    )
}

fn compliance() -> Outcome {
    let registry = registry();
    let failing: BTreeSet<u64> = sample(&mut rng_from_seed(11), 200, 11).into_iter().map(|i| i as u64).collect();
    let llm = MockLlm::new(0, MalformationPolicy::Conversations(failing));
    let dir = tempfile::tempdir().unwrap();
    let mut config = mock_config(dir.path(), 200, 7, 4);
    config.llm.max_retries = 0;
    let report = run_generate_with(&config, &registry, &llm, &MockVoice::new()).map_err(|e| e.to_string())?;
    ensure(
        report.attempts == 200 && report.successes == 189 && report.compliance_percent == 94.5,
        format!(
            "{} successes of {} attempts, {:.1}% compliance",
            report.successes, report.attempts, report.compliance_percent
        ),
    )
}

fn voice_consistency() -> Outcome {
    let registry = registry();
    let dir = tempfile::tempdir().unwrap();
    let llm = MockLlm::new(0, MalformationPolicy::Never);
    run_generate_with(&mock_config(dir.path(), 20, 31, 4), &registry, &llm, &MockVoice::new())
        .map_err(|e| e.to_string())?;
    let manifest = load_manifest(dir.path()).map_err(|e| e.to_string())?;
    let reference: BTreeMap<String, f64> = manifest
        .voices
        .iter()
        .map(|v| {
            let clip = read_wav(dir.path().join(&v.file)).unwrap();
            (v.persona.clone(), f0_oracle(clip.samples(), clip.sample_rate()))
        })
        .collect();
    let mut per_persona: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut worst = 0.0f64;
    let mut segments = 0;
    for entry in manifest.successes() {
        let rows = read_ground_truth_csv(dir.path().join(entry.csv.as_ref().unwrap())).unwrap();
        for (row, path) in rows.iter().zip(&entry.segments) {
            let clip = read_wav(dir.path().join(path)).unwrap();
            let f0 = f0_oracle(clip.samples(), clip.sample_rate());
            worst = worst.max((f0 - reference[&row.speaker]).abs());
            per_persona.entry(row.speaker.clone()).or_default().push(f0);
            segments += 1;
        }
    }
    let max_std = per_persona.values().map(|v| mean_std(v).1).fold(0.0, f64::max);
    ensure(
        manifest.successes().count() == 20 && worst <= 1.0 && max_std < 1.0,
        format!("{segments} segments, max deviation {worst:.4} Hz, max std {max_std:.4} Hz"),
    )
}

fn snr_estimator() -> Outcome {
    let rate = 16_000;
    let clip = AudioClip::new(gated_tone(220.0, 0.5, 2.2, 0.3, 10.0, rate), rate).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (seed, target) in [(1, 10.0), (2, 20.0), (3, 40.0)] {
        let noise = white_noise(clip.len(), rate, seed).unwrap();
        let est = estimate_snr(&mix_noise(&clip, &noise, target).unwrap()).unwrap();
        ok &= (est - target).abs() <= 1.5;
        parts.push(format!("{target:.0}->{est:.2}"));
    }

    let registry = registry();
    let dir = tempfile::tempdir().unwrap();
    let llm = MockLlm::new(0, MalformationPolicy::Never);
    run_generate_with(&mock_config(dir.path(), 3, 5, 1), &registry, &llm, &MockVoice::new())
        .map_err(|e| e.to_string())?;
    let manifest = load_manifest(dir.path()).unwrap();
    let clean = manifest
        .successes()
        .map(|e| estimate_snr(&read_wav(dir.path().join(e.wav.as_ref().unwrap())).unwrap()).unwrap())
        .fold(f64::INFINITY, f64::min);
    ok &= clean >= 60.0;

    let tone = AudioClip::new(gated_tone(440.0, 0.3, 1.0, 0.2, 5.0, rate), rate).unwrap();
    let capped = estimate_snr(&tone).unwrap();
    ok &= capped == SNR_CAP_DB;
    ensure(
        ok,
        format!("mixtures {}; clean mock min {clean:.1} dB; tone {capped:.1} dB", parts.join(", ")),
    )
}

fn mix_accuracy() -> Outcome {
    let rate = 24_000;
    let clip = AudioClip::new(gated_tone(180.0, 0.6, 1.5, 0.4, 6.0, rate), rate).unwrap();
    let noise = white_noise(rate as usize, rate, 12).unwrap();
    let mut worst = 0.0f64;
    for target in [0.0, 10.0, 20.0, 40.0] {
        let m = mix_noise_components(&clip, &noise, target).map_err(|e| e.to_string())?;
        worst = worst.max((db(power(&m.signal) / power(&m.noise)) - target).abs());
    }
    ensure(worst <= 0.1, format!("max error {worst:.5} dB"))
}

fn sampling() -> Outcome {
    let registry = registry();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..10_000u64 {
        let roster = registry.sample_participants(&mut rng_from_seed(hash64(99, i))).unwrap();
        *counts.entry(roster.len()).or_default() += 1;
    }
    let pct: Vec<(usize, f64)> = counts.iter().map(|(&k, &c)| (k, c as f64 / 100.0)).collect();
    let ok = counts.keys().copied().eq(2..=5) && pct.iter().all(|(_, p)| (p - 25.0).abs() <= 1.5);
    ensure(
        ok,
        pct.iter().map(|(k, p)| format!("{k}: {p:.2}%")).collect::<Vec<_>>().join(", "),
    )
}

fn wav_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut exact = 0;
    for seed in 0..100u64 {
        let mut rng = rng_from_seed(hash64(5, seed));
        let rate = SUPPORTED_SAMPLE_RATES[rng.gen_range(0..SUPPORTED_SAMPLE_RATES.len())];
        let samples: Vec<f32> = (0..rng.gen_range(1..30_000)).map(|_| dequantize(rng.gen_range(-32767..=32767))).collect();
        let clip = AudioClip::new(samples, rate).unwrap();
        let path = dir.path().join(format!("{seed}.wav"));
        write_wav(&clip, &path).map_err(|e| e.to_string())?;
        let bytes = fs::read(&path).unwrap();
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let header = &bytes[0..4] == b"RIFF"
            && &bytes[8..16] == b"WAVEfmt "
            && u16_at(20) == 1
            && u16_at(22) == 1
            && u32_at(24) == rate
            && u32_at(28) == rate * 2
            && u16_at(32) == 2
            && u16_at(34) == 16
            && &bytes[36..40] == b"data"
            && u32_at(40) as usize == clip.len() * 2;
        let back = read_wav(&path).map_err(|e| e.to_string())?;
        let same = back.sample_rate() == rate
            && back.len() == clip.len()
            && back.samples().iter().zip(clip.samples()).all(|(a, b)| a.to_bits() == b.to_bits());
        if header && same {
            exact += 1;
        }
    }
    ensure(exact == 100, format!("{exact}/100 clips bit-exact with 16-bit PCM mono headers"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("three-segment ground truth rows", reference_table),
        ("parser round-trip and malformed rejection", parser_round_trip),
        ("stage direction removed from Ben line", stage_direction),
        ("byte-identical output with 1 and 8 workers", determinism),
        ("compliance accounting 189/200", compliance),
        ("voice consistency over 20 conversations", voice_consistency),
        ("SNR estimator", snr_estimator),
        ("mix_noise target accuracy", mix_accuracy),
        ("speaker-count sampling uniformity", sampling),
        ("WAV round-trip of 100 clips", wav_round_trip),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.2} s]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
