//! Line-delimited JSON episode traces.
//!
//! Line 1 is a [`TraceHeader`]; every following line is one [`RoundRecord`].
//! The last record of a finished episode carries a [`Terminal`] block.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::backends::AnswerOption;
use crate::error::{Error, Result};
use crate::model::{MemoryEntry, NodeId};

pub const TRACE_SCHEMA: &str = "longshot.trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub video_id: String,
    pub seed: u64,
    pub duration: f64,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub queries: Vec<String>,
    pub anchors: Vec<AnchorRecord>,
    /// Query discovery produced nothing usable; the episode ran without anchors.
    pub degraded: bool,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub time: f64,
    pub similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub node: NodeId,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    Anchor,
    Coverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub time: f64,
    pub source: FrameSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub node: NodeId,
    pub start: f64,
    pub end: f64,
    pub atomic: bool,
    pub raw_score: i64,
    pub explanation: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub node: NodeId,
    pub start: f64,
    pub end: f64,
    pub r: f64,
    pub u: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub capacity: usize,
    pub added: Vec<MemoryEntry>,
    pub evicted: Vec<MemoryEntry>,
    /// Buffer contents after the update, ordered by time.
    pub entries: Vec<MemoryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionRecord {
    Explore {
        node: NodeId,
        /// Chosen by the engine after the policy reply could not be used.
        fallback: bool,
    },
    Answer {
        label: String,
        rationale: String,
        forced: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    PolicyAnswered,
    ForcedByRoundLimit,
    ForcedByFrameBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub answer: String,
    pub termination: Termination,
    pub rounds_used: u32,
    pub frames_observed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub selected: Span,
    pub frames: Vec<FrameRecord>,
    pub radius: f64,
    pub children: Vec<ChildRecord>,
    /// Every candidate in S after the update, with its scores.
    pub candidates: Vec<CandidateRecord>,
    pub entropy: f64,
    /// `(1 - H, H)`.
    pub weights: [f64; 2],
    pub memory: MemoryRecord,
    pub queries_added: Vec<String>,
    pub anchors_added: Vec<AnchorRecord>,
    pub anchors_removed: Vec<AnchorRecord>,
    pub action: ActionRecord,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Terminal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub rounds: Vec<RoundRecord>,
}

impl EpisodeTrace {
    pub fn terminal(&self) -> Option<&Terminal> {
        self.rounds.last().and_then(|r| r.terminal.as_ref())
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let mut line = |value: &dyn erased::Line| -> Result<()> {
            let text = value.to_line()?;
            writeln!(out, "{text}").map_err(|e| Error::Trace(e.to_string()))
        };
        line(&self.header)?;
        for r in &self.rounds {
            line(r)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Trace(e.to_string()))
    }

    /// Strict round trip of [`EpisodeTrace::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let parsed = read_trace(text.as_bytes())?;
        if let Some(problem) = parsed.truncated {
            return Err(Error::Trace(problem));
        }
        Ok(parsed.trace)
    }
}

mod erased {
    use serde::Serialize;

    use crate::error::{Error, Result};

    pub trait Line {
        fn to_line(&self) -> Result<String>;
    }

    impl<T: Serialize> Line for T {
        fn to_line(&self) -> Result<String> {
            serde_json::to_string(self).map_err(|e| Error::Trace(e.to_string()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedTrace {
    pub trace: EpisodeTrace,
    /// Why reading stopped early, if it did.
    pub truncated: Option<String>,
}

/// Read a trace, keeping every complete round before the first bad line.
/// Fails on an empty input, an unreadable header, or a schema/version mismatch.
pub fn read_trace(input: impl BufRead) -> Result<ParsedTrace> {
    let mut lines = input.lines();
    let first = match lines.next() {
        None => return Err(Error::Trace("empty trace file".into())),
        Some(line) => line.map_err(|e| Error::Trace(e.to_string()))?,
    };
    let raw: serde_json::Value = serde_json::from_str(&first)
        .map_err(|e| Error::Trace(format!("unreadable header: {e}")))?;
    let schema = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<none>");
    let version = raw.get("version").and_then(|v| v.as_u64());
    if schema != TRACE_SCHEMA || version != Some(TRACE_VERSION as u64) {
        return Err(Error::Trace(format!(
            "schema mismatch: file has {schema} v{}, expected {TRACE_SCHEMA} v{TRACE_VERSION}",
            version.map_or("?".to_string(), |v| v.to_string())
        )));
    }
    let header: TraceHeader = serde_json::from_value(raw)
        .map_err(|e| Error::Trace(format!("invalid header: {e}")))?;
    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut truncated = None;
    for (idx, line) in lines.enumerate() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                truncated = Some(format!("line {}: {e}", idx + 2));
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RoundRecord>(&line) {
            Ok(rec) => {
                let expected = rounds.len() as u32 + 1;
                if rec.round != expected {
                    truncated = Some(format!(
                        "line {}: round {} out of sequence (expected {expected})",
                        idx + 2,
                        rec.round
                    ));
                    break;
                }
                rounds.push(rec);
            }
            Err(e) => {
                truncated = Some(format!("line {}: {e}", idx + 2));
                break;
            }
        }
    }
    if truncated.is_none() && rounds.last().is_some_and(|r| r.terminal.is_none()) {
        truncated = Some("trace ends without a terminal record".into());
    }
    Ok(ParsedTrace {
        trace: EpisodeTrace { header, rounds },
        truncated,
    })
}

/// Human-readable, round-by-round rendering.
pub fn render(parsed: &ParsedTrace) -> String {
    use std::fmt::Write as _;
    let h = &parsed.trace.header;
    let mut s = String::new();
    let _ = writeln!(s, "video {} ({:.1} s)", h.video_id, h.duration);
    let _ = writeln!(s, "question: {}", h.question);
    for o in &h.options {
        let _ = writeln!(s, "  {}. {}", o.label, o.text);
    }
    let _ = writeln!(s, "queries: {}", h.queries.join(" | "));
    let _ = writeln!(
        s,
        "anchors: {}",
        h.anchors
            .iter()
            .map(|a| format!("{}@{:.2}", a.time, a.similarity))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if h.degraded {
        let _ = writeln!(s, "degraded: no usable queries");
    }
    for r in &parsed.trace.rounds {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "== round {} == expand node {} [{}, {}]",
            r.round, r.selected.node, r.selected.start, r.selected.end
        );
        let frames: Vec<String> = r
            .frames
            .iter()
            .map(|f| match f.source {
                FrameSource::Anchor => format!("{}*", f.time),
                FrameSource::Coverage => f.time.to_string(),
            })
            .collect();
        let _ = writeln!(
            s,
            "  frames: {} (radius {}, * = anchor)",
            frames.join(" "),
            r.radius
        );
        let _ = writeln!(
            s,
            "  fusion: H = {:.4}, weights (1-H, H) = ({:.4}, {:.4})",
            r.entropy, r.weights[0], r.weights[1]
        );
        for c in &r.candidates {
            let _ = writeln!(
                s,
                "    node {:>4} [{}, {}]  r={:.3} u={:.3} h={:.3}",
                c.node, c.start, c.end, c.r, c.u, c.h
            );
        }
        let _ = writeln!(
            s,
            "  memory: +{} -{} ({}/{})",
            r.memory.added.len(),
            r.memory.evicted.len(),
            r.memory.entries.len(),
            r.memory.capacity
        );
        if !r.queries_added.is_empty() {
            let _ = writeln!(s, "  new queries: {}", r.queries_added.join(" | "));
        }
        if !r.anchors_added.is_empty() || !r.anchors_removed.is_empty() {
            let _ = writeln!(
                s,
                "  anchors: +{} -{}",
                r.anchors_added.len(),
                r.anchors_removed.len()
            );
        }
        match &r.action {
            ActionRecord::Explore { node, fallback } => {
                let note = if *fallback { " (fallback)" } else { "" };
                let _ = writeln!(s, "  action: explore node {node}{note}");
            }
            ActionRecord::Answer { label, forced, .. } => {
                let note = if *forced { " (forced)" } else { "" };
                let _ = writeln!(s, "  action: answer {label}{note}");
            }
        }
        if r.retries > 0 {
            let _ = writeln!(s, "  retries: {}", r.retries);
        }
        for w in &r.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
        if let Some(t) = &r.terminal {
            let _ = writeln!(
                s,
                "\nanswer {} after {} rounds, {} frames ({:?})",
                t.answer, t.rounds_used, t.frames_observed, t.termination
            );
        }
    }
    if let Some(problem) = &parsed.truncated {
        let _ = writeln!(
            s,
            "\n[truncated: {} complete rounds shown; {problem}]",
            parsed.trace.rounds.len()
        );
    }
    s
}
