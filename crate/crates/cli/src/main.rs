use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use convoforge::augment::{AugmentSpec, NoiseSource};
use convoforge::manifest::CountMode;
use convoforge::pipeline::{self, BackendKind, RunConfig};
use convoforge::tts_service::{check_tts_endpoint, TtsServer};
use convoforge::voice::MockVoice;

#[derive(Parser)]
#[command(name = "convoforge", version, about = "Synthetic multi-speaker conversation datasets")]
struct Cli {
    /// Log progress (repeat for debug output)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset
    Generate(GenerateArgs),
    /// Re-check every invariant of a generated dataset
    Validate {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Dataset statistics
    Stats {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
        /// Also write the JSON report here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time single-attempt generations and count malformed responses
    BenchLlm(BenchArgs),
    /// Write noisy/reverberant copies of an existing dataset's audio
    Augment {
        dir: PathBuf,
        #[command(flatten)]
        augment: AugmentArgs,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Serve the speech protocol backed by the offline mock voice
    ServeMockTts {
        #[arg(long, default_value = "127.0.0.1:8020")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        max_concurrent: usize,
    },
    /// Run the speech-protocol conformance checks against a server
    CheckTts {
        url: String,
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Mock => BackendKind::Mock,
            Backend::Http => BackendKind::Http,
        }
    }
}

#[derive(Args)]
struct BaseArgs {
    /// TOML run configuration; flags override its fields
    #[arg(short, long, env = "CONVOFORGE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    personas: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LlmArgs {
    #[arg(long, value_enum)]
    llm: Option<Backend>,
    #[arg(long, env = "CONVOFORGE_LLM_ENDPOINT")]
    llm_endpoint: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    #[arg(long)]
    llm_timeout: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    mock_seed: Option<u64>,
    #[arg(long)]
    mock_malformed_rate: Option<f64>,
    /// Comma-separated conversation indices the mock always malforms
    #[arg(long, value_delimiter = ',')]
    mock_malformed_conversations: Option<Vec<u64>>,
    #[arg(long)]
    mock_latency_ms: Option<u64>,
}

#[derive(Args)]
struct AugmentArgs {
    /// `white`, `none`, or a WAV file to loop as background noise
    #[arg(long)]
    noise: Option<String>,
    /// Target signal-to-noise ratio in dB
    #[arg(long)]
    snr: Option<f64>,
    /// Reverberation time in seconds (0 disables)
    #[arg(long)]
    rt60: Option<f64>,
    #[arg(long)]
    augment_seed: Option<u64>,
}

impl AugmentArgs {
    fn given(&self) -> bool {
        self.noise.is_some() || self.snr.is_some() || self.rt60.is_some() || self.augment_seed.is_some()
    }

    fn apply(&self, spec: &mut AugmentSpec) {
        if let Some(n) = &self.noise {
            spec.noise = match n.as_str() {
                "white" => Some(NoiseSource::White),
                "none" => None,
                path => Some(NoiseSource::File(PathBuf::from(path))),
            };
        }
        if let Some(s) = self.snr {
            spec.target_snr_db = s;
        }
        if let Some(r) = self.rt60 {
            spec.rt60_s = r;
        }
        if let Some(s) = self.augment_seed {
            spec.seed = s;
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    base: BaseArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(short = 'n', long)]
    count: Option<u64>,
    #[arg(short, long)]
    workers: Option<usize>,
    /// Attempt exactly `count` conversations (default)
    #[arg(long, conflicts_with = "count_successes")]
    count_attempts: bool,
    /// Keep going until `count` conversations succeed
    #[arg(long)]
    count_successes: bool,
    #[arg(long)]
    max_attempts: Option<u64>,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Silence between turns in seconds
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    voice_seed: Option<u64>,
    #[arg(long)]
    voice_cache: Option<PathBuf>,
    /// Replace an existing dataset in the output directory
    #[arg(long)]
    overwrite: bool,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long, value_enum)]
    tts: Option<Backend>,
    #[arg(long, env = "CONVOFORGE_TTS_URL")]
    tts_url: Option<String>,
    #[arg(long)]
    tts_timeout: Option<f64>,
    #[command(flatten)]
    augment: AugmentArgs,
    /// Write the run report (JSON) here
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    base: BaseArgs,
    #[arg(short = 'n', long, default_value_t = 50)]
    requests: usize,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(base: &BaseArgs) -> Result<RunConfig> {
    let mut config = match &base.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &base.personas {
        config.personas = p.clone();
    }
    if let Some(s) = base.seed {
        config.seed = s;
    }
    Ok(config)
}

fn apply_llm(args: &LlmArgs, config: &mut RunConfig) {
    let llm = &mut config.llm;
    if let Some(b) = args.llm {
        llm.backend = b.into();
    }
    if let Some(v) = &args.llm_endpoint {
        llm.endpoint = v.clone();
    }
    if let Some(v) = &args.llm_model {
        llm.model = v.clone();
    }
    if let Some(v) = args.llm_timeout {
        llm.timeout_s = v;
    }
    if let Some(v) = args.temperature {
        llm.temperature = v;
    }
    if let Some(v) = args.max_retries {
        llm.max_retries = v;
    }
    if let Some(v) = args.mock_seed {
        llm.mock_seed = v;
    }
    if let Some(v) = args.mock_malformed_rate {
        llm.mock_malformed_rate = v;
    }
    if let Some(v) = &args.mock_malformed_conversations {
        llm.mock_malformed_conversations = v.clone();
    }
    if let Some(v) = args.mock_latency_ms {
        llm.mock_latency_ms = v;
    }
}

fn generate_config(args: &GenerateArgs) -> Result<RunConfig> {
    let mut c = base_config(&args.base)?;
    if let Some(v) = &args.output {
        c.output = v.clone();
    }
    if let Some(v) = args.count {
        c.count = v;
    }
    if let Some(v) = args.workers {
        c.workers = v;
    }
    if args.count_successes {
        c.count_mode = CountMode::Successes;
    } else if args.count_attempts {
        c.count_mode = CountMode::Attempts;
    }
    if let Some(v) = args.max_attempts {
        c.max_attempts = Some(v);
    }
    if let Some(v) = args.sample_rate {
        c.sample_rate = v;
    }
    if let Some(v) = args.gap {
        c.gap_s = v;
    }
    if let Some(v) = args.voice_seed {
        c.voice_seed = v;
    }
    if let Some(v) = &args.voice_cache {
        c.voice_cache = Some(v.clone());
    }
    c.overwrite |= args.overwrite;
    apply_llm(&args.llm, &mut c);
    if let Some(b) = args.tts {
        c.tts.backend = b.into();
    }
    if let Some(v) = &args.tts_url {
        c.tts.url = v.clone();
    }
    if let Some(v) = args.tts_timeout {
        c.tts.timeout_s = v;
    }
    if args.augment.given() {
        let spec = c.augment.get_or_insert_with(AugmentSpec::default);
        args.augment.apply(spec);
    }
    Ok(c)
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let config = generate_config(&args)?;
            let report = pipeline::run_generate(&config)?;
            if let Some(path) = &args.report {
                write_out(path, &report.to_json())?;
            }
            if args.json {
                print!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Validate { dir, json } => {
            let summary = pipeline::run_validate(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                for v in &summary.violations {
                    println!("{v}");
                }
                println!(
                    "{} conversations, {} files checked, {} violations",
                    summary.conversations_checked,
                    summary.files_checked,
                    summary.violations.len()
                );
            }
            if !summary.is_clean() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Stats { dir, json, out } => {
            let report = pipeline::run_stats(&dir)?;
            if let Some(path) = &out {
                write_out(path, &report.to_json())?;
            }
            if json {
                print!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::BenchLlm(args) => {
            let mut config = base_config(&args.base)?;
            apply_llm(&args.llm, &mut config);
            let report = pipeline::run_bench_llm(&config, args.requests)?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(path) = &args.out {
                write_out(path, &json)?;
            }
            if args.json {
                println!("{json}");
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Augment { dir, augment, workers } => {
            if !augment.given() {
                bail!("nothing to do: pass --noise, --snr, --rt60 or --augment-seed");
            }
            let mut spec = AugmentSpec::default();
            augment.apply(&mut spec);
            let n = pipeline::run_augment(&dir, &spec, workers)?;
            println!("augmented {n} conversations");
        }
        Command::ServeMockTts { addr, max_concurrent } => {
            let server = TtsServer::start(&addr, Arc::new(MockVoice::new()), max_concurrent)
                .map_err(anyhow::Error::msg)?;
            eprintln!("mock speech service listening on {}", server.url());
            server.join();
        }
        Command::CheckTts { url, timeout, json } => {
            let checks = check_tts_endpoint(&url, Duration::from_secs_f64(timeout));
            if json {
                println!("{}", serde_json::to_string_pretty(&checks)?);
            } else {
                for c in &checks {
                    let mark = if c.passed { "PASS" } else { "FAIL" };
                    println!("{mark}  {}  ({})", c.name, c.detail);
                }
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
