//! Conversation assembly: concatenate rendered turns, derive diarization
//! ground truth, write segment/conversation WAVs and CSVs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav, AudioClip, AudioError, WavError};
use crate::voice::RenderedSegment;

pub const CSV_HEADER: [&str; 4] = ["filename", "start", "end", "speaker"];
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const SEGMENTS_DIR: &str = "segments";

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("no segments to concatenate")]
    EmptySegmentList,
    #[error("segment {index} has {samples} samples, shorter than one centisecond")]
    SegmentTooShort { index: usize, samples: usize },
    #[error(transparent)]
    MixedSampleRates(#[from] AudioError),
    #[error("gap must be a finite non-negative number of seconds, got {0}")]
    InvalidGap(f64),
    #[error("ground truth invariant violated: {0}")]
    InvariantViolation(ContiguityViolation),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Wav(#[from] WavError),
}

/// Time in whole centiseconds; ground truth is kept at two-decimal precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    /// Sample index to seconds, rounded half-up to two decimals. Exact
    /// integer arithmetic, so cumulative positions never drift.
    pub fn from_samples(samples: u64, sample_rate: u32) -> Self {
        let rate = sample_rate as u64;
        Self((samples * 200 + rate) / (2 * rate))
    }

    pub fn from_secs(seconds: f64) -> Self {
        Self((seconds * 100.0 + 0.5).floor().max(0.0) as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn centis(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl FromStr for Timestamp {
    type Err = String;

    /// Accepts `S.CC`, `S.C` or `S`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid timestamp {s:?}");
        let (whole, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
        if whole.is_empty() || frac.len() > 2 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: u64 = whole.parse().map_err(|_| bad())?;
        let frac: u64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<u64>().map_err(|_| bad())? * 10,
            _ => frac.parse().map_err(|_| bad())?,
        };
        Ok(Self(whole * 100 + frac))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub filename: String,
    pub start: Timestamp,
    pub end: Timestamp,
    pub speaker: String,
}

impl GroundTruthRecord {
    pub fn to_csv_line(&self) -> String {
        format!("{},{},{},{}", self.filename, self.start, self.end, self.speaker)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContiguityViolation {
    pub filename: String,
    /// 1-based data row (header excluded).
    pub row: usize,
    pub message: String,
}

impl fmt::Display for ContiguityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} row {}: {}", self.filename, self.row, self.message)
    }
}

/// `{speaker}_{turn_index}.wav`
pub fn segment_filename(speaker: &str, turn_index: usize) -> String {
    format!("{speaker}_{turn_index}.wav")
}

pub fn gap_samples(gap_s: f64, sample_rate: u32) -> usize {
    (gap_s * sample_rate as f64).round() as usize
}

/// Join segments with `round(gap_s × rate)` zero samples between neighbours.
/// Each record spans its segment's exact sample extent; gaps belong to no
/// speaker.
pub fn concatenate(
    segments: &[RenderedSegment],
    gap_s: f64,
    filename: &str,
) -> Result<(AudioClip, Vec<GroundTruthRecord>), AssembleError> {
    let first = segments.first().ok_or(AssembleError::EmptySegmentList)?;
    if !(gap_s.is_finite() && gap_s >= 0.0) {
        return Err(AssembleError::InvalidGap(gap_s));
    }
    let rate = first.clip.sample_rate();
    if let Some(other) = segments.iter().find(|s| s.clip.sample_rate() != rate) {
        return Err(AudioError::MixedSampleRates(rate, other.clip.sample_rate()).into());
    }
    let min_len = (rate as usize).div_ceil(100);
    if let Some((index, s)) = segments.iter().enumerate().find(|(_, s)| s.clip.len() < min_len) {
        return Err(AssembleError::SegmentTooShort {
            index,
            samples: s.clip.len(),
        });
    }
    let gap = gap_samples(gap_s, rate);
    let total = segments.iter().map(|s| s.clip.len()).sum::<usize>() + gap * (segments.len() - 1);

    let mut samples = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(segments.len());
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            samples.resize(samples.len() + gap, 0.0);
        }
        let start = samples.len() as u64;
        samples.extend_from_slice(seg.clip.samples());
        records.push(GroundTruthRecord {
            filename: filename.to_string(),
            start: Timestamp::from_samples(start, rate),
            end: Timestamp::from_samples(samples.len() as u64, rate),
            speaker: seg.speaker.clone(),
        });
    }
    Ok((AudioClip::new(samples, rate)?, records))
}

/// Check ground-truth rows grouped by file: the first row of a file starts at
/// 0.00, every row ends after it starts, and consecutive rows are separated by
/// exactly the gap (zero gap: end equals next start; otherwise within one
/// centisecond of rounding).
pub fn check_contiguity(records: &[GroundTruthRecord], gap_s: f64) -> Vec<ContiguityViolation> {
    let gap = Timestamp::from_secs(gap_s).centis() as i64;
    let mut out = Vec::new();
    let mut prev: Option<&GroundTruthRecord> = None;
    for (i, r) in records.iter().enumerate() {
        let row = i + 1;
        let mut violation = |message: String| {
            out.push(ContiguityViolation {
                filename: r.filename.clone(),
                row,
                message,
            })
        };
        if r.end <= r.start {
            violation(format!("end {} is not after start {}", r.end, r.start));
        }
        match prev.filter(|p| p.filename == r.filename) {
            None => {
                if r.start != Timestamp(0) {
                    violation(format!("first row of file starts at {}, not 0.00", r.start));
                }
                if records[..i].iter().any(|q| q.filename == r.filename) {
                    violation("rows for this file are not contiguous in the table".into());
                }
            }
            Some(p) => {
                let delta = r.start.centis() as i64 - p.end.centis() as i64;
                let ok = if gap == 0 {
                    delta == 0
                } else {
                    (delta - gap).abs() <= 1
                };
                if !ok {
                    violation(format!(
                        "starts at {} but previous row ends at {} (expected gap {:.2} s)",
                        r.start, p.end, gap_s
                    ));
                }
            }
        }
        prev = Some(r);
    }
    out
}

pub fn write_ground_truth_csv(
    path: impl AsRef<Path>,
    records: &[GroundTruthRecord],
    gap_s: f64,
) -> Result<(), AssembleError> {
    if let Some(v) = check_contiguity(records, gap_s).into_iter().next() {
        return Err(AssembleError::InvariantViolation(v));
    }
    let path = path.as_ref();
    let mut body = CSV_HEADER.join(",");
    body.push('\n');
    for r in records {
        body.push_str(&r.to_csv_line());
        body.push('\n');
    }
    fs::write(path, body).map_err(|source| AssembleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_ground_truth_csv(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>, AssembleError> {
    let path = path.as_ref();
    let csv_err = |message: String| AssembleError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(csv_err(format!("unexpected header {headers:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversationArtifact {
    pub conv_id: String,
    pub dir: PathBuf,
    pub wav_path: PathBuf,
    pub csv_path: PathBuf,
    pub segment_paths: Vec<PathBuf>,
    pub records: Vec<GroundTruthRecord>,
    pub samples: usize,
    pub sample_rate: u32,
}

impl ConversationArtifact {
    pub fn duration_s(&self) -> f64 {
        self.samples as f64 / self.sample_rate as f64
    }
}

/// Write `dir/segments/Name_i.wav`, `dir/{conv_id}.wav` and
/// `dir/ground_truth.csv`.
pub fn write_conversation(
    dir: &Path,
    conv_id: &str,
    segments: &[RenderedSegment],
    gap_s: f64,
) -> Result<(ConversationArtifact, AudioClip), AssembleError> {
    let filename = format!("{conv_id}.wav");
    let (clip, records) = concatenate(segments, gap_s, &filename)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AssembleError::Io { path, source }
    };
    let seg_dir = dir.join(SEGMENTS_DIR);
    fs::create_dir_all(&seg_dir).map_err(io(&seg_dir))?;
    let mut segment_paths = Vec::with_capacity(segments.len());
    for seg in segments {
        let p = seg_dir.join(segment_filename(&seg.speaker, seg.turn_index));
        write_wav(&seg.clip, &p)?;
        segment_paths.push(p);
    }
    let wav_path = dir.join(&filename);
    write_wav(&clip, &wav_path)?;
    let csv_path = dir.join(GROUND_TRUTH_FILE);
    write_ground_truth_csv(&csv_path, &records, gap_s)?;
    Ok((
        ConversationArtifact {
            conv_id: conv_id.to_string(),
            dir: dir.to_path_buf(),
            wav_path,
            csv_path,
            segment_paths,
            records,
            samples: clip.len(),
            sample_rate: clip.sample_rate(),
        },
        clip,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(speaker: &str, seconds: f64, rate: u32, index: usize) -> RenderedSegment {
        let n = (seconds * rate as f64).round() as usize;
        RenderedSegment {
            speaker: speaker.into(),
            turn_index: index,
            clip: AudioClip::new(vec![0.1; n], rate).unwrap(),
        }
    }

    #[test]
    fn filenames() {
        assert_eq!(segment_filename("Alice", 0), "Alice_0.wav");
        assert_eq!(segment_filename("David", 1), "David_1.wav");
        assert_eq!(segment_filename("Grace", 10), "Grace_10.wav");
    }

    #[test]
    fn timestamp_rounding_is_half_up() {
        // 0.005 s at 16 kHz is exactly 80 samples
        assert_eq!(Timestamp::from_samples(80, 16_000).to_string(), "0.01");
        assert_eq!(Timestamp::from_samples(79, 16_000).to_string(), "0.00");
        assert_eq!(Timestamp::from_samples(24_000 * 61, 24_000).to_string(), "61.00");
        assert_eq!("8.35".parse::<Timestamp>(), Ok(Timestamp(835)));
        assert_eq!("8.3".parse::<Timestamp>(), Ok(Timestamp(830)));
        assert_eq!("12".parse::<Timestamp>(), Ok(Timestamp(1200)));
        assert!("8.355".parse::<Timestamp>().is_err());
        assert!("-1.00".parse::<Timestamp>().is_err());
    }

    #[test]
    fn single_segment() {
        let (clip, recs) = concatenate(&[seg("A", 2.5, 24_000, 0)], 0.0, "1.wav").unwrap();
        assert_eq!(clip.len(), 60_000);
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].start, recs[0].end), (Timestamp(0), Timestamp(250)));
    }

    #[test]
    fn gaps_are_zero_samples_between_segments() {
        let segs = [seg("A", 1.0, 16_000, 0), seg("B", 0.5, 16_000, 1), seg("A", 0.25, 16_000, 2)];
        let (clip, recs) = concatenate(&segs, 0.3, "x.wav").unwrap();
        assert_eq!(clip.len(), 16_000 + 8_000 + 4_000 + 2 * 4_800);
        assert!(clip.samples()[16_000..20_800].iter().all(|&s| s == 0.0));
        assert_eq!(recs[1].start.to_string(), "1.30");
        assert!(check_contiguity(&recs, 0.3).is_empty());
        assert!(!check_contiguity(&recs, 0.0).is_empty());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            concatenate(&[], 0.0, "x.wav"),
            Err(AssembleError::EmptySegmentList)
        ));
        let mixed = [seg("A", 1.0, 16_000, 0), seg("B", 1.0, 24_000, 1)];
        assert!(matches!(
            concatenate(&mixed, 0.0, "x.wav"),
            Err(AssembleError::MixedSampleRates(_))
        ));
        assert!(matches!(
            concatenate(&[seg("A", 1.0, 16_000, 0)], -1.0, "x.wav"),
            Err(AssembleError::InvalidGap(_))
        ));
    }

    #[test]
    fn csv_write_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        write_ground_truth_csv(&path, &[], 0.0).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "filename,start,end,speaker\n");

        let recs = vec![
            GroundTruthRecord {
                filename: "1.wav".into(),
                start: Timestamp(0),
                end: Timestamp(105),
                speaker: "A".into(),
            },
            GroundTruthRecord {
                filename: "1.wav".into(),
                start: Timestamp(105),
                end: Timestamp(1000),
                speaker: "B".into(),
            },
        ];
        write_ground_truth_csv(&path, &recs, 0.0).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "filename,start,end,speaker\n1.wav,0.00,1.05,A\n1.wav,1.05,10.00,B\n"
        );
        assert_eq!(read_ground_truth_csv(&path).unwrap(), recs);
    }

    #[test]
    fn overlapping_rows_rejected() {
        let mut recs = vec![
            GroundTruthRecord {
                filename: "1.wav".into(),
                start: Timestamp(0),
                end: Timestamp(200),
                speaker: "A".into(),
            },
            GroundTruthRecord {
                filename: "1.wav".into(),
                start: Timestamp(150),
                end: Timestamp(300),
                speaker: "B".into(),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let err = write_ground_truth_csv(dir.path().join("gt.csv"), &recs, 0.0).unwrap_err();
        match err {
            AssembleError::InvariantViolation(v) => assert_eq!(v.row, 2),
            other => panic!("unexpected {other:?}"),
        }
        recs[1].start = Timestamp(200);
        recs.push(GroundTruthRecord {
            filename: "2.wav".into(),
            start: Timestamp(10),
            end: Timestamp(20),
            speaker: "A".into(),
        });
        let v = check_contiguity(&recs, 0.0);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].filename.as_str(), v[0].row), ("2.wav", 3));
    }

    #[test]
    fn writes_conversation_layout() {
        let dir = tempfile::tempdir().unwrap();
        let segs = [seg("Grace", 0.5, 16_000, 0), seg("Eva", 0.25, 16_000, 1)];
        let (art, clip) = write_conversation(dir.path(), "92", &segs, 0.0).unwrap();
        assert!(dir.path().join("segments/Grace_0.wav").exists());
        assert!(dir.path().join("segments/Eva_1.wav").exists());
        assert!(dir.path().join("92.wav").exists());
        assert_eq!(art.samples, clip.len());
        assert_eq!(art.records.last().unwrap().end, Timestamp::from_secs(art.duration_s()));
        assert_eq!(
            read_ground_truth_csv(&art.csv_path).unwrap(),
            art.records
        );
    }
}
