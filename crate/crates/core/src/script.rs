//! Marker-format conversation scripts.
//!
//! Raw model output is expected to contain exactly one `[CONV_BEGIN]` ...
//! `[CONV_END]` block whose non-blank lines each read `[Name] text`. Anything
//! outside the block is ignored. Stage directions such as `(squinting)` are
//! removed from dialogue before it reaches speech synthesis.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BEGIN_MARKER: &str = "[CONV_BEGIN]";
pub const END_MARKER: &str = "[CONV_END]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    MissingBeginMarker,
    MissingEndMarker,
    MarkersOutOfOrder,
    UnknownSpeaker,
    MalformedTurnLine,
    EmptyConversation,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatIssue {
    pub code: ErrorCode,
    pub message: String,
    /// 1-based line in the raw text, when the issue has a location.
    pub line: Option<usize>,
}

impl fmt::Display for FormatIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.code, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub errors: Vec<FormatIssue>,
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn codes(&self) -> Vec<ErrorCode> {
        self.errors.iter().map(|e| e.code).collect()
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("response is not in the conversation format ({} issue(s)): {}", .0.errors.len(), first_issue(.0))]
    Format(ValidationResult),
    #[error("a conversation script needs at least one turn")]
    EmptyScript,
    #[error("turn {index}: speaker {speaker:?} is not in the roster")]
    SpeakerNotInRoster { index: usize, speaker: String },
    #[error("turn {index}: text is empty or not in canonical form")]
    UncleanText { index: usize },
}

fn first_issue(v: &ValidationResult) -> String {
    v.errors.first().map(ToString::to_string).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// An ordered, speaker-attributed conversation. Construction enforces that
/// there is at least one turn, every speaker is on the roster, and every text
/// is already in cleaned canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConversationScript {
    id: String,
    roster: Vec<String>,
    turns: Vec<Turn>,
}

impl ConversationScript {
    pub fn new(
        id: impl Into<String>,
        roster: Vec<String>,
        turns: Vec<Turn>,
    ) -> Result<Self, ScriptError> {
        if turns.is_empty() {
            return Err(ScriptError::EmptyScript);
        }
        for (index, t) in turns.iter().enumerate() {
            if !roster.contains(&t.speaker) {
                return Err(ScriptError::SpeakerNotInRoster {
                    index,
                    speaker: t.speaker.clone(),
                });
            }
            if t.text.is_empty()
                || clean_text(&t.text) != t.text
                || t.text.contains(BEGIN_MARKER)
                || t.text.contains(END_MARKER)
            {
                return Err(ScriptError::UncleanText { index });
            }
        }
        Ok(Self {
            id: id.into(),
            roster,
            turns,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn roster(&self) -> &[String] {
        &self.roster
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// Roster members with no turns.
    pub fn silent_participants(&self) -> Vec<&str> {
        self.roster
            .iter()
            .filter(|n| !self.turns.iter().any(|t| &t.speaker == *n))
            .map(String::as_str)
            .collect()
    }

    /// Canonical marker-format text.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(BEGIN_MARKER);
        out.push_str("\n\n");
        for t in &self.turns {
            out.push('[');
            out.push_str(&t.speaker);
            out.push_str("] ");
            out.push_str(&t.text);
            out.push('\n');
        }
        out.push('\n');
        out.push_str(END_MARKER);
        out.push('\n');
        out
    }

    /// One `{"name": ..., "dialogue": ...}` object per turn.
    pub fn to_json_records(&self) -> Vec<String> {
        self.turns
            .iter()
            .map(|t| {
                // serde_json never fails on plain strings.
                let name = serde_json::to_string(&t.speaker).expect("string serializes");
                let dialogue = serde_json::to_string(&t.text).expect("string serializes");
                format!("{{\"name\": {name}, \"dialogue\": {dialogue}}}")
            })
            .collect()
    }
}

fn stage_direction_patterns() -> &'static [Regex; 3] {
    static PATTERNS: OnceLock<[Regex; 3]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            // escaped parentheses must go first, or the plain rule eats half
            Regex::new(r"\\\(.*?\\\)").unwrap(),
            Regex::new(r"\(.*?\)").unwrap(),
            Regex::new(r"\*.*?\*").unwrap(),
        ]
    })
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Remove `(...)`, `\(...\)` and `*...*` spans (shortest match, no nesting),
/// collapse whitespace and trim. Applied until nothing changes, so the result
/// is a fixed point.
pub fn strip_stage_directions(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let mut next = current.clone();
        for re in stage_direction_patterns() {
            next = re.replace_all(&next, "").into_owned();
        }
        let next = collapse_whitespace(&next);
        if next == current {
            return next;
        }
        current = next;
    }
}

/// Dialogue cleaning applied to every turn.
pub fn clean_text(text: &str) -> String {
    strip_stage_directions(text)
}

fn turn_line_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"^\[([^\[\]]*)\](.*)$").unwrap())
}

struct ScannedTurn {
    speaker: String,
    text: String,
}

fn line_of(raw: &str, byte_offset: usize) -> usize {
    raw[..byte_offset].matches('\n').count() + 1
}

fn issue(code: ErrorCode, line: Option<usize>, message: impl Into<String>) -> FormatIssue {
    FormatIssue {
        code,
        message: message.into(),
        line,
    }
}

/// Shared by `validate_format` and `parse`, so the two always agree.
fn scan<S: AsRef<str>>(raw: &str, roster: &[S]) -> (ValidationResult, Vec<ScannedTurn>) {
    let mut errors = Vec::new();
    let begins: Vec<usize> = raw.match_indices(BEGIN_MARKER).map(|(i, _)| i).collect();
    let ends: Vec<usize> = raw.match_indices(END_MARKER).map(|(i, _)| i).collect();

    if begins.is_empty() {
        errors.push(issue(
            ErrorCode::MissingBeginMarker,
            None,
            format!("no {BEGIN_MARKER} marker"),
        ));
    }
    if ends.is_empty() {
        errors.push(issue(
            ErrorCode::MissingEndMarker,
            None,
            format!("no {END_MARKER} marker"),
        ));
    }
    for &dup in begins.iter().skip(1) {
        errors.push(issue(
            ErrorCode::MarkersOutOfOrder,
            Some(line_of(raw, dup)),
            format!("repeated {BEGIN_MARKER} marker"),
        ));
    }
    for &dup in ends.iter().skip(1) {
        errors.push(issue(
            ErrorCode::MarkersOutOfOrder,
            Some(line_of(raw, dup)),
            format!("repeated {END_MARKER} marker"),
        ));
    }
    if let (Some(&b), Some(&e)) = (begins.first(), ends.first()) {
        if e < b {
            errors.push(issue(
                ErrorCode::MarkersOutOfOrder,
                Some(line_of(raw, e)),
                format!("{END_MARKER} precedes {BEGIN_MARKER}"),
            ));
        }
    }
    if !errors.is_empty() {
        return (ValidationResult { errors }, Vec::new());
    }

    let body_start = begins[0] + BEGIN_MARKER.len();
    let body = &raw[body_start..ends[0]];
    let first_line = line_of(raw, body_start);
    let mut turns = Vec::new();

    for (offset, line) in body.split('\n').enumerate() {
        let line_no = first_line + offset;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(caps) = turn_line_pattern().captures(line) else {
            errors.push(issue(
                ErrorCode::MalformedTurnLine,
                Some(line_no),
                "line does not start with a bracketed speaker name",
            ));
            continue;
        };
        let name = caps[1].trim();
        if name.is_empty() {
            errors.push(issue(
                ErrorCode::MalformedTurnLine,
                Some(line_no),
                "empty speaker name",
            ));
            continue;
        }
        if !roster.iter().any(|r| r.as_ref() == name) {
            errors.push(issue(
                ErrorCode::UnknownSpeaker,
                Some(line_no),
                format!("speaker {name:?} is not a participant"),
            ));
            continue;
        }
        let text = clean_text(&caps[2]);
        if text.is_empty() {
            errors.push(issue(
                ErrorCode::MalformedTurnLine,
                Some(line_no),
                format!("turn by {name} has no spoken text"),
            ));
            continue;
        }
        turns.push(ScannedTurn {
            speaker: name.to_string(),
            text,
        });
    }

    if turns.is_empty() && errors.is_empty() {
        errors.push(issue(
            ErrorCode::EmptyConversation,
            Some(first_line),
            "no turns between the markers",
        ));
    }
    (ValidationResult { errors }, turns)
}

pub fn validate_format<S: AsRef<str>>(raw: &str, roster: &[S]) -> ValidationResult {
    scan(raw, roster).0
}

pub fn parse<S: AsRef<str>>(
    raw: &str,
    roster: &[S],
    id: impl Into<String>,
) -> Result<ConversationScript, ScriptError> {
    let (result, scanned) = scan(raw, roster);
    if !result.is_valid() {
        return Err(ScriptError::Format(result));
    }
    let turns = scanned
        .into_iter()
        .map(|t| Turn::new(t.speaker, t.text))
        .collect();
    ConversationScript::new(
        id,
        roster.iter().map(|s| s.as_ref().to_string()).collect(),
        turns,
    )
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    name: String,
    dialogue: String,
}

/// Read JSON-lines dialogue records back into a script.
pub fn from_json_records(
    lines: &str,
    roster: Vec<String>,
    id: impl Into<String>,
) -> Result<ConversationScript, ScriptError> {
    let mut turns = Vec::new();
    for (i, line) in lines.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let rec: JsonRecord = serde_json::from_str(line).map_err(|e| {
            ScriptError::Format(ValidationResult {
                errors: vec![issue(
                    ErrorCode::MalformedTurnLine,
                    Some(i + 1),
                    e.to_string(),
                )],
            })
        })?;
        turns.push(Turn::new(rec.name, rec.dialogue));
    }
    ConversationScript::new(id, roster, turns)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMEDY_CLUB: &str = "Sure, here you go!\n\n[CONV_BEGIN]\n\n\
[Cathy] Did you guys hear about the new comedy club opening up downtown? It's going to be huge!\n\
[Ben] \\(squinting\\) Really? I hadn't heard. What makes you say that?\n\n[CONV_END]\n";

    #[test]
    fn parses_dialogue_example() {
        let s = parse(COMEDY_CLUB, &["Cathy", "Ben"], "92").unwrap();
        assert_eq!(
            s.turns(),
            [
                Turn::new(
                    "Cathy",
                    "Did you guys hear about the new comedy club opening up downtown? It's going to be huge!"
                ),
                Turn::new("Ben", "Really? I hadn't heard. What makes you say that?"),
            ]
        );
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_stage_directions("\\(squinting\\) Really?"), "Really?");
        assert_eq!(strip_stage_directions("no directions here"), "no directions here");
        assert_eq!(
            strip_stage_directions("(laughs) Sure, (nods) fine *winks*"),
            "Sure, fine"
        );
        assert_eq!(strip_stage_directions("(sighs)"), "");
    }

    #[test]
    fn missing_end_marker() {
        let raw = COMEDY_CLUB.replace(END_MARKER, "");
        let v = validate_format(&raw, &["Cathy", "Ben"]);
        assert_eq!(v.codes(), [ErrorCode::MissingEndMarker]);
    }

    #[test]
    fn missing_both_markers() {
        let v = validate_format("[Cathy] hi", &["Cathy"]);
        assert_eq!(
            v.codes(),
            [ErrorCode::MissingBeginMarker, ErrorCode::MissingEndMarker]
        );
    }

    #[test]
    fn unknown_speaker_reports_line() {
        let raw = "[CONV_BEGIN]\n[Cathy] hello\n[Zoe] hi\n[CONV_END]";
        let v = validate_format(raw, &["Cathy", "Ben"]);
        assert_eq!(v.codes(), [ErrorCode::UnknownSpeaker]);
        assert_eq!(v.errors[0].line, Some(3));
    }

    #[test]
    fn out_of_order_and_duplicate_markers() {
        let v = validate_format("[CONV_END]\n[CONV_BEGIN]\n[A] x", &["A"]);
        assert_eq!(v.codes(), [ErrorCode::MarkersOutOfOrder]);
        assert_eq!(v.errors[0].line, Some(1));
        let v = validate_format("[CONV_BEGIN]\n[A] x\n[CONV_BEGIN]\n[CONV_END]", &["A"]);
        assert_eq!(v.codes(), [ErrorCode::MarkersOutOfOrder]);
        assert_eq!(v.errors[0].line, Some(3));
    }

    #[test]
    fn malformed_and_empty_lines() {
        let raw = "[CONV_BEGIN]\nA: hello there\n[A] (waves)\n[] hi\n[CONV_END]";
        let v = validate_format(raw, &["A"]);
        assert_eq!(
            v.codes(),
            [
                ErrorCode::MalformedTurnLine,
                ErrorCode::MalformedTurnLine,
                ErrorCode::MalformedTurnLine
            ]
        );
        assert_eq!(
            v.errors.iter().map(|e| e.line).collect::<Vec<_>>(),
            [Some(2), Some(3), Some(4)]
        );
        let v = validate_format("[CONV_BEGIN]\n\n   \n[CONV_END]", &["A"]);
        assert_eq!(v.codes(), [ErrorCode::EmptyConversation]);
    }

    #[test]
    fn markers_inline_with_text() {
        let raw = "[CONV_BEGIN] [A] one\n[B]  two   words [CONV_END] trailing";
        let s = parse(raw, &["A", "B"], "x").unwrap();
        assert_eq!(s.turns(), [Turn::new("A", "one"), Turn::new("B", "two words")]);
    }

    #[test]
    fn bracket_name_padding_is_trimmed() {
        let s = parse("[CONV_BEGIN]\n[Ben ] I agree!\n[CONV_END]", &["Ben"], "x").unwrap();
        assert_eq!(s.turns()[0].speaker, "Ben");
    }

    #[test]
    fn parse_error_carries_result() {
        match parse("nothing", &["A"], "x") {
            Err(ScriptError::Format(v)) => assert!(!v.is_valid()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serialize_two_turns() {
        let s = ConversationScript::new(
            "1",
            vec!["A".into(), "B".into()],
            vec![Turn::new("A", "Hi."), Turn::new("B", "Hello!")],
        )
        .unwrap();
        let text = s.serialize();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text, "[CONV_BEGIN]\n\n[A] Hi.\n[B] Hello!\n\n[CONV_END]\n");
        assert!(validate_format(&text, s.roster()).is_valid());
    }

    #[test]
    fn script_invariants() {
        assert!(matches!(
            ConversationScript::new("1", vec!["A".into()], vec![]),
            Err(ScriptError::EmptyScript)
        ));
        assert!(matches!(
            ConversationScript::new("1", vec!["A".into()], vec![Turn::new("B", "x")]),
            Err(ScriptError::SpeakerNotInRoster { .. })
        ));
        assert!(matches!(
            ConversationScript::new("1", vec!["A".into()], vec![Turn::new("A", "(x) y")]),
            Err(ScriptError::UncleanText { index: 0 })
        ));
    }

    #[test]
    fn json_records() {
        let s = ConversationScript::new(
            "1",
            vec!["Cathy".into()],
            vec![Turn::new("Cathy", "Hi!"), Turn::new("Cathy", "She said \"no\".")],
        )
        .unwrap();
        let recs = s.to_json_records();
        assert_eq!(recs[0], r#"{"name": "Cathy", "dialogue": "Hi!"}"#);
        assert_eq!(recs[1], r#"{"name": "Cathy", "dialogue": "She said \"no\"."}"#);
        let back = from_json_records(&recs.join("\n"), s.roster().to_vec(), "1").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn silent_participants_listed() {
        let s = ConversationScript::new(
            "1",
            vec!["A".into(), "B".into(), "C".into()],
            vec![Turn::new("A", "x"), Turn::new("C", "y")],
        )
        .unwrap();
        assert_eq!(s.silent_participants(), ["B"]);
    }
}
