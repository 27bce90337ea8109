//! Timestamped scripts and their partition into function units.
//!
//! A script is an ordered list of transcript lines. Segmentation groups the
//! lines into units, each aligned to the clip range covered by its lines.
//! In function-centric mode a unit starts at every "How to ...?" header line;
//! in sentence-centric mode every line is its own unit.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum backwards overlap between consecutive lines before a script is rejected.
pub const OVERLAP_TOLERANCE_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("malformed script: {0}")]
    MalformedScript(String),
    #[error("script has no lines")]
    EmptyScript,
    #[error("cannot align an empty list of lines")]
    EmptySublist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub video_id: String,
    pub lines: Vec<ScriptLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionUnit {
    pub function_id: String,
    pub para_text: String,
    pub clip_start_s: f64,
    pub clip_end_s: f64,
    pub source_line_indices: Vec<usize>,
}

/// The segmented function set of one video, as written to `functions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSet {
    pub video_id: String,
    pub functions: Vec<FunctionUnit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentationMode {
    #[serde(rename = "function")]
    FunctionCentric,
    #[serde(rename = "sentence")]
    SentenceCentric,
}

impl SegmentationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentationMode::FunctionCentric => "function",
            SegmentationMode::SentenceCentric => "sentence",
        }
    }
}

impl fmt::Display for SegmentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "function" | "function-centric" => Ok(SegmentationMode::FunctionCentric),
            "sentence" | "sentence-centric" => Ok(SegmentationMode::SentenceCentric),
            other => Err(format!("unknown segmentation mode `{other}` (expected function|sentence)")),
        }
    }
}

fn header_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"(?i)^\s*How to .*\?").expect("static regex"))
}

/// True when `text` opens a new function in function-centric mode.
pub fn is_function_header(text: &str) -> bool {
    header_pattern().is_match(text)
}

#[derive(Deserialize)]
struct RawScript {
    video_id: String,
    lines: Vec<RawLine>,
}

#[derive(Deserialize)]
struct RawLine {
    start_s: f64,
    end_s: f64,
    text: String,
}

/// Parses a script JSON document, sorting lines by start time and validating them.
///
/// Line texts are stored trimmed. Consecutive lines may overlap by at most
/// [`OVERLAP_TOLERANCE_S`].
pub fn parse_script(raw: &[u8]) -> Result<Script, ScriptError> {
    let text = std::str::from_utf8(raw).map_err(|e| ScriptError::MalformedScript(format!("invalid UTF-8: {e}")))?;
    let parsed: RawScript = serde_json::from_str(text).map_err(|e| ScriptError::MalformedScript(e.to_string()))?;
    if parsed.lines.is_empty() {
        return Err(ScriptError::EmptyScript);
    }

    let mut lines = Vec::with_capacity(parsed.lines.len());
    for (i, line) in parsed.lines.into_iter().enumerate() {
        if !line.start_s.is_finite() || !line.end_s.is_finite() {
            return Err(ScriptError::MalformedScript(format!("line {i}: non-finite timestamp")));
        }
        if line.start_s < 0.0 {
            return Err(ScriptError::MalformedScript(format!("line {i}: negative start_s")));
        }
        if line.start_s > line.end_s {
            return Err(ScriptError::MalformedScript(format!(
                "line {i}: start_s {} > end_s {}",
                line.start_s, line.end_s
            )));
        }
        let text = line.text.trim();
        if text.is_empty() {
            return Err(ScriptError::MalformedScript(format!("line {i}: empty text")));
        }
        lines.push(ScriptLine { start_s: line.start_s, end_s: line.end_s, text: text.to_string() });
    }

    lines.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for (i, pair) in lines.windows(2).enumerate() {
        if pair[1].start_s < pair[0].end_s - OVERLAP_TOLERANCE_S {
            return Err(ScriptError::MalformedScript(format!(
                "lines {} and {} overlap by more than {OVERLAP_TOLERANCE_S} s",
                i,
                i + 1
            )));
        }
    }

    Ok(Script { video_id: parsed.video_id, lines })
}

/// Clip range covered by `lines`: earliest start to latest end.
pub fn align_clip(lines: &[ScriptLine]) -> Result<(f64, f64), ScriptError> {
    let first = lines.first().ok_or(ScriptError::EmptySublist)?;
    Ok(lines.iter().skip(1).fold((first.start_s, first.end_s), |(lo, hi), l| (lo.min(l.start_s), hi.max(l.end_s))))
}

pub fn segment(script: &Script, mode: SegmentationMode) -> Result<Vec<FunctionUnit>, ScriptError> {
    if script.lines.is_empty() {
        return Err(ScriptError::EmptyScript);
    }

    // Half-open line ranges, one per unit.
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    match mode {
        SegmentationMode::SentenceCentric => {
            ranges.extend((0..script.lines.len()).map(|i| (i, i + 1)));
        }
        SegmentationMode::FunctionCentric => {
            let mut starts: Vec<usize> =
                script.lines.iter().enumerate().filter(|(_, l)| is_function_header(&l.text)).map(|(i, _)| i).collect();
            // Lines before the first header join the first unit.
            match starts.first_mut() {
                Some(first) => *first = 0,
                None => starts.push(0),
            }
            for (k, &start) in starts.iter().enumerate() {
                let end = starts.get(k + 1).copied().unwrap_or(script.lines.len());
                ranges.push((start, end));
            }
        }
    }

    let prefix = match mode {
        SegmentationMode::FunctionCentric => "f",
        SegmentationMode::SentenceCentric => "s",
    };
    ranges
        .into_iter()
        .enumerate()
        .map(|(k, (start, end))| {
            let lines = &script.lines[start..end];
            let (clip_start_s, clip_end_s) = align_clip(lines)?;
            let para_text = lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join(" ");
            Ok(FunctionUnit {
                function_id: format!("{prefix}{k}"),
                para_text,
                clip_start_s,
                clip_end_s,
                source_line_indices: (start..end).collect(),
            })
        })
        .collect()
}

/// Segments a script and wraps the units with the video id.
pub fn segment_script(script: &Script, mode: SegmentationMode) -> Result<FunctionSet, ScriptError> {
    Ok(FunctionSet { video_id: script.video_id.clone(), functions: segment(script, mode)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(start_s: f64, end_s: f64, text: &str) -> ScriptLine {
        ScriptLine { start_s, end_s, text: text.to_string() }
    }

    fn script_of(texts: &[&str]) -> Script {
        Script {
            video_id: "v".into(),
            lines: texts.iter().enumerate().map(|(i, t)| line(i as f64 * 2.0, i as f64 * 2.0 + 1.5, t)).collect(),
        }
    }

    #[test]
    fn parses_single_line() {
        let raw = br#"{"video_id":"v1","lines":[{"start_s":0.0,"end_s":3.2,"text":"Press the start button."}]}"#;
        let script = parse_script(raw).unwrap();
        assert_eq!(script.video_id, "v1");
        assert_eq!(script.lines, vec![line(0.0, 3.2, "Press the start button.")]);
    }

    #[test]
    fn resorts_lines() {
        let raw = br#"{"video_id":"v","lines":[
            {"start_s":5.0,"end_s":6.0,"text":"b"},
            {"start_s":0.0,"end_s":1.0,"text":"a"}]}"#;
        let script = parse_script(raw).unwrap();
        let texts: Vec<_> = script.lines.iter().map(|l| l.text.as_str()).collect();
        assert_eq!(texts, ["a", "b"]);
    }

    #[test]
    fn rejects_bad_records() {
        let inverted = br#"{"video_id":"v","lines":[{"start_s":5.0,"end_s":2.0,"text":"x"}]}"#;
        assert!(matches!(parse_script(inverted), Err(ScriptError::MalformedScript(_))));
        let missing = br#"{"video_id":"v","lines":[{"start_s":5.0,"text":"x"}]}"#;
        assert!(matches!(parse_script(missing), Err(ScriptError::MalformedScript(_))));
        let blank = br#"{"video_id":"v","lines":[{"start_s":0.0,"end_s":1.0,"text":"   "}]}"#;
        assert!(matches!(parse_script(blank), Err(ScriptError::MalformedScript(_))));
        assert!(matches!(parse_script(b"not json"), Err(ScriptError::MalformedScript(_))));
        let empty = br#"{"video_id":"v","lines":[]}"#;
        assert!(matches!(parse_script(empty), Err(ScriptError::EmptyScript)));
    }

    #[test]
    fn overlap_tolerance() {
        let jitter = br#"{"video_id":"v","lines":[
            {"start_s":0.0,"end_s":3.4,"text":"a"},
            {"start_s":3.0,"end_s":5.0,"text":"b"}]}"#;
        assert!(parse_script(jitter).is_ok());
        let overlap = br#"{"video_id":"v","lines":[
            {"start_s":0.0,"end_s":4.0,"text":"a"},
            {"start_s":3.0,"end_s":5.0,"text":"b"}]}"#;
        assert!(matches!(parse_script(overlap), Err(ScriptError::MalformedScript(_))));
    }

    #[test]
    fn function_centric_splits_on_headers() {
        let script = script_of(&[
            "How to defrost 1kg of fish?",
            "Press turbo defrost button.",
            "How to set microwave to 1 minute timer?",
            "Turn time knob clockwise.",
        ]);
        let units = segment(&script, SegmentationMode::FunctionCentric).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].source_line_indices, vec![0, 1]);
        assert_eq!(units[1].source_line_indices, vec![2, 3]);
        assert_eq!(units[0].para_text, "How to defrost 1kg of fish? Press turbo defrost button.");
        assert_eq!(units[1].function_id, "f1");
        assert_eq!((units[1].clip_start_s, units[1].clip_end_s), (4.0, 7.5));
    }

    #[test]
    fn preamble_joins_first_unit() {
        let script = script_of(&["Hello there.", "how to open the door?", "Pull it."]);
        let units = segment(&script, SegmentationMode::FunctionCentric).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].source_line_indices, vec![0, 1, 2]);

        let no_header = script_of(&["Just talk.", "More talk."]);
        let units = segment(&no_header, SegmentationMode::FunctionCentric).unwrap();
        assert_eq!(units.len(), 1);
    }

    #[test]
    fn sentence_centric_one_unit_per_line() {
        let script = script_of(&["How to x?", "a", "b"]);
        let units = segment(&script, SegmentationMode::SentenceCentric).unwrap();
        assert_eq!(units.len(), 3);
        assert_eq!(units[2].function_id, "s2");
        assert_eq!(units[2].para_text, "b");
    }

    #[test]
    fn header_pattern_cases() {
        assert!(is_function_header("How to start?"));
        assert!(is_function_header("  HOW TO stop the oven?"));
        assert!(!is_function_header("How to start"));
        assert!(!is_function_header("Learn how to start?"));
        assert!(!is_function_header("Howto start?"));
    }

    #[test]
    fn align_clip_examples() {
        assert_eq!(align_clip(&[line(0.0, 3.2, "a"), line(3.2, 7.9, "b")]).unwrap(), (0.0, 7.9));
        assert_eq!(align_clip(&[line(12.0, 15.5, "a")]).unwrap(), (12.0, 15.5));
        assert_eq!(align_clip(&[line(10.0, 12.0, "a"), line(5.0, 8.0, "b")]).unwrap(), (5.0, 12.0));
        assert!(matches!(align_clip(&[]), Err(ScriptError::EmptySublist)));
    }

    #[test]
    fn empty_script_rejected() {
        let script = Script { video_id: "v".into(), lines: vec![] };
        assert!(matches!(segment(&script, SegmentationMode::SentenceCentric), Err(ScriptError::EmptyScript)));
    }

    fn arb_script() -> impl Strategy<Value = Script> {
        let text = prop_oneof!["[a-z]{1,8}( [a-z]{1,8}){0,4}\\.", "How to [a-z]{1,8}( [a-z]{1,6}){0,3}\\?",];
        prop::collection::vec((0.0f64..3.0, text), 1..20).prop_map(|items| {
            let mut t = 0.0;
            let lines = items
                .into_iter()
                .map(|(len, text)| {
                    let l = line(t, t + len, &text);
                    t += len;
                    l
                })
                .collect();
            Script { video_id: "p".into(), lines }
        })
    }

    proptest! {
        #[test]
        fn partition_is_lossless(script in arb_script()) {
            let all = script.lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join(" ");
            for mode in [SegmentationMode::FunctionCentric, SegmentationMode::SentenceCentric] {
                let units = segment(&script, mode).unwrap();
                let joined = units.iter().map(|u| u.para_text.as_str()).collect::<Vec<_>>().join(" ");
                prop_assert_eq!(&joined, &all);
                let indices: Vec<usize> = units.iter().flat_map(|u| u.source_line_indices.clone()).collect();
                prop_assert_eq!(indices, (0..script.lines.len()).collect::<Vec<_>>());
                for pair in units.windows(2) {
                    prop_assert!(pair[0].clip_start_s <= pair[1].clip_start_s);
                }
            }
        }
    }
}
