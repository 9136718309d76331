use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::metrics::DatasetReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub conv_id: String,
    pub stage: String,
    pub reasons: Vec<String>,
}

/// Outcome of one `generate` run. Carries wall-clock timings, so it is kept
/// out of the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub attempts: usize,
    pub successes: usize,
    pub compliance_percent: f64,
    pub failures: Vec<FailureSummary>,
    pub llm_requests: usize,
    pub text_gen_seconds: f64,
    pub tts_seconds: f64,
    pub wall_seconds: f64,
    pub workers: usize,
    pub output: PathBuf,
    pub dataset: Option<DatasetReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut t = String::new();
        let per = |total: f64| {
            if self.successes == 0 {
                0.0
            } else {
                total / self.successes as f64
            }
        };
        let _ = writeln!(t, "output             {}", self.output.display());
        let _ = writeln!(t, "attempts           {}", self.attempts);
        let _ = writeln!(t, "successes          {}", self.successes);
        let _ = writeln!(t, "failures           {}", self.failures.len());
        let _ = writeln!(t, "compliance         {:.1}%", self.compliance_percent);
        let _ = writeln!(t, "llm requests       {}", self.llm_requests);
        let _ = writeln!(t, "text generation    {:.2} s", self.text_gen_seconds);
        let _ = writeln!(
            t,
            "speech synthesis   {:.2} s ({:.2} s per conversation)",
            self.tts_seconds,
            per(self.tts_seconds)
        );
        let _ = writeln!(t, "wall clock         {:.2} s with {} workers", self.wall_seconds, self.workers);
        for f in &self.failures {
            let _ = writeln!(t, "  failed {} ({}): {}", f.conv_id, f.stage, f.reasons.join("; "));
        }
        if let Some(d) = &self.dataset {
            t.push('\n');
            t.push_str(&d.to_table());
        }
        t
    }
}
