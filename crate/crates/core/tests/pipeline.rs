mod common;

use std::collections::BTreeSet;
use std::fs;

use convoforge::assemble::read_ground_truth_csv;
use convoforge::llm::{MalformationPolicy, MockLlm};
use convoforge::manifest::{load_manifest, CountMode};
use convoforge::metrics::{dataset_report, rescan};
use convoforge::pipeline::{run_generate, run_generate_with, run_validate, PipelineError};
use convoforge::seed::rng_from_seed;
use convoforge::voice::MockVoice;
use rand::seq::index::sample;

use common::{mock_config, registry, tree_digest};

#[test]
fn output_is_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Rate(0.1));
    let ra = run_generate_with(&mock_config(a.path(), 20, 42, 1), &reg, &llm, &MockVoice::new()).unwrap();
    let rb = run_generate_with(&mock_config(b.path(), 20, 42, 8), &reg, &llm, &MockVoice::new()).unwrap();
    assert_eq!(ra.successes, rb.successes);
    assert_eq!(ra.dataset, rb.dataset);
    let (da, db) = (tree_digest(a.path()), tree_digest(b.path()));
    assert!(da.len() > 20);
    assert_eq!(da, db);
    assert!(run_validate(a.path()).unwrap().is_clean());
}

#[test]
fn different_seeds_differ() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Never);
    run_generate_with(&mock_config(a.path(), 3, 1, 1), &reg, &llm, &MockVoice::new()).unwrap();
    run_generate_with(&mock_config(b.path(), 3, 2, 1), &reg, &llm, &MockVoice::new()).unwrap();
    assert_ne!(
        fs::read(a.path().join("ground_truth.csv")).unwrap(),
        fs::read(b.path().join("ground_truth.csv")).unwrap()
    );
}

#[test]
fn report_survives_rescan() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(3, MalformationPolicy::Conversations([1, 4].into()));
    let report = run_generate_with(&mock_config(dir.path(), 8, 9, 2), &reg, &llm, &MockVoice::new()).unwrap();
    assert_eq!(report.attempts, 8);
    assert_eq!(report.successes, 6);

    let manifest = load_manifest(dir.path()).unwrap();
    let mut from_manifest: Vec<_> = manifest.entries.iter().filter(|e| e.success).cloned().collect();
    let mut scanned = rescan(dir.path()).unwrap();
    from_manifest.sort_by(|x, y| x.conv_id.cmp(&y.conv_id));
    scanned.sort_by(|x, y| x.conv_id.cmp(&y.conv_id));
    assert_eq!(
        from_manifest.iter().map(|e| &e.conv_id).collect::<Vec<_>>(),
        scanned.iter().map(|e| &e.conv_id).collect::<Vec<_>>()
    );
    let again = dataset_report(dir.path(), &scanned, report.attempts).unwrap();
    assert_eq!(report.dataset.as_ref().unwrap(), &again);

    // merged table equals the per-conversation tables in id order
    let merged = read_ground_truth_csv(dir.path().join("ground_truth.csv")).unwrap();
    let mut ids: Vec<u64> = scanned.iter().map(|e| e.conv_id.parse().unwrap()).collect();
    ids.sort();
    let mut concatenated = Vec::new();
    for id in ids {
        concatenated.extend(read_ground_truth_csv(dir.path().join(id.to_string()).join("ground_truth.csv")).unwrap());
    }
    assert_eq!(merged, concatenated);
}

#[test]
fn validate_flags_overlap_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Never);
    run_generate_with(&mock_config(dir.path(), 2, 11, 1), &reg, &llm, &MockVoice::new()).unwrap();
    assert!(run_validate(dir.path()).unwrap().is_clean());

    let csv = dir.path().join("0").join("ground_truth.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[2].split(',').map(String::from).collect();
    let start: f64 = fields[1].parse().unwrap();
    fields[1] = format!("{:.2}", start - 0.5);
    lines[2] = fields.join(",");
    fs::write(&csv, lines.join("\n") + "\n").unwrap();

    let wav = dir.path().join("1").join("1.wav");
    let bytes = fs::read(&wav).unwrap();
    fs::write(&wav, &bytes[..bytes.len() / 2]).unwrap();

    let summary = run_validate(dir.path()).unwrap();
    assert!(!summary.is_clean());
    assert!(
        summary.violations.iter().any(|v| v.file.ends_with("0/ground_truth.csv") && v.row == Some(2)),
        "{:#?}",
        summary.violations
    );
    assert!(summary.violations.iter().any(|v| v.file.ends_with("1/1.wav")), "{:#?}", summary.violations);
}

#[test]
fn warm_cache_skips_reference_synthesis() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Never);

    let cold = MockVoice::new();
    run_generate_with(&mock_config(first.path(), 2, 1, 1), &reg, &llm, &cold).unwrap();
    assert_eq!(cold.reference_calls(), reg.len());

    let warm = MockVoice::new();
    let mut config = mock_config(second.path(), 2, 1, 1);
    config.voice_cache = Some(first.path().join("voices"));
    run_generate_with(&config, &reg, &llm, &warm).unwrap();
    assert_eq!(warm.reference_calls(), 0);
    assert!(warm.speak_calls() > 0);
    for id in ["0", "1"] {
        let name = format!("{id}/{id}.wav");
        assert_eq!(fs::read(first.path().join(&name)).unwrap(), fs::read(second.path().join(&name)).unwrap());
    }
}

#[test]
fn injected_failures_are_accounted() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry();
    let ids: BTreeSet<u64> = sample(&mut rng_from_seed(7), 200, 11).into_iter().map(|i| i as u64).collect();
    let llm = MockLlm::new(0, MalformationPolicy::Conversations(ids.clone()));
    let mut config = mock_config(dir.path(), 200, 2024, 4);
    config.llm.max_retries = 0;
    let report = run_generate_with(&config, &reg, &llm, &MockVoice::new()).unwrap();
    assert_eq!(report.attempts, 200);
    assert_eq!(report.successes, 189);
    assert_eq!(report.compliance_percent, 94.5);
    let failed: BTreeSet<u64> = report.failures.iter().map(|f| f.conv_id.parse().unwrap()).collect();
    assert_eq!(failed, ids);
    assert!(report.failures.iter().all(|f| f.stage == "text"));
    let manifest = load_manifest(dir.path()).unwrap();
    assert_eq!(manifest.failures.len(), 11);
    assert_eq!(manifest.successes().count(), 189);
}

#[test]
fn retries_recover_from_rate_failures() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Rate(0.5));
    let mut config = mock_config(dir.path(), 10, 5, 2);
    config.llm.max_retries = 6;
    let report = run_generate_with(&config, &reg, &llm, &MockVoice::new()).unwrap();
    assert_eq!(report.successes, 10);
    assert!(report.llm_requests > 10);
}

#[test]
fn successes_mode_tops_up() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Conversations([0, 2, 3].into()));
    let mut config = mock_config(dir.path(), 5, 1, 2);
    config.count_mode = CountMode::Successes;
    config.llm.max_retries = 0;
    let report = run_generate_with(&config, &reg, &llm, &MockVoice::new()).unwrap();
    assert_eq!(report.successes, 5);
    assert_eq!(report.attempts, 8);
    assert!(run_validate(dir.path()).unwrap().is_clean());
}

#[test]
fn existing_dataset_is_not_clobbered() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Never);
    let config = mock_config(dir.path(), 1, 1, 1);
    run_generate_with(&config, &reg, &llm, &MockVoice::new()).unwrap();
    let err = run_generate_with(&config, &reg, &llm, &MockVoice::new()).unwrap_err();
    assert!(matches!(err, PipelineError::OutputExists(_)), "{err}");
    let config = convoforge::pipeline::RunConfig { overwrite: true, ..config };
    run_generate_with(&config, &reg, &llm, &MockVoice::new()).unwrap();
}

#[test]
fn reference_failure_names_persona() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry();
    let llm = MockLlm::new(0, MalformationPolicy::Never);
    let err = run_generate_with(&mock_config(dir.path(), 2, 1, 1), &reg, &llm, &MockVoice::new().failing_on("gruff"))
        .unwrap_err();
    assert!(err.to_string().contains("Frank"), "{err}");
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("personas.toml"), common::PERSONAS_TOML).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "personas = \"personas.toml\"\noutput = \"out\"\ncount = 3\nseed = 4\n\n[augment]\nnoise = { kind = \"white\" }\ntarget_snr_db = 15.0\n",
    )
    .unwrap();
    let config = convoforge::pipeline::RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let report = run_generate(&config).unwrap();
    assert_eq!(report.successes, 3);
    let manifest = load_manifest(&dir.path().join("out")).unwrap();
    assert!(manifest.entries.iter().all(|e| e.augmented.is_some()));
    assert!(run_validate(&dir.path().join("out")).unwrap().is_clean());
}
