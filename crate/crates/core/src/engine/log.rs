//! Episode logs and their JSON-lines form.
//!
//! Line 1 is `{"header": ...}` with the full engine config, seeds, map and
//! spawn poses; then one line per event; the last line is
//! `{"summary": ...}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EngineConfig;
use crate::grid::Cell;
use crate::metrics::RatioCurve;
use crate::perception::AgentPose;
use crate::worldgen::{GridMap, WorldgenError};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Spawn,
    Decide,
    Forward,
    TurnLeft,
    TurnRight,
    Lost,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub t: f64,
    pub agent: Option<usize>,
    pub kind: EventKind,
    pub cell: Option<Cell>,
    pub ratio: f64,
    pub reward: f64,
    /// Bytes the deciding agent pulled from peers for this decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_bytes: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSeeds {
    pub map: u64,
    pub spawn: u64,
    pub delay: u64,
    pub decision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub config: EngineConfig,
    pub seeds: EpisodeSeeds,
    pub map: Vec<String>,
    pub spawns: Vec<AgentPose>,
    pub reachable_cells: usize,
    /// Free-form metadata supplied by the caller (experiment config etc.).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl EpisodeHeader {
    pub fn map(&self) -> Result<GridMap, WorldgenError> {
        let mut text = self.map.join("\n");
        text.push('\n');
        GridMap::from_ascii(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    FullCoverage,
    TimeCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub terminal_time_s: f64,
    pub end_reason: EndReason,
    pub final_ratio: f64,
    pub time_to_success_s: Option<f64>,
    pub overlap_at_success: Option<f64>,
}

/// One macro action as seen by the trainer: every team reward credited to
/// the agent between this decision and the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRecord {
    pub issued_at_s: f64,
    pub goal: Cell,
    /// Atomic steps the macro executed.
    pub steps: u32,
    /// `(atomic step offset, reward)` pairs, offsets non-decreasing.
    pub rewards: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub events: Vec<LogEvent>,
    pub curve: RatioCurve,
    /// Per-agent macro history. Not part of the JSON-lines form.
    pub macros: Vec<Vec<MacroRecord>>,
    pub summary: EpisodeSummary,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: EpisodeHeader,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: EpisodeSummary,
}

impl EpisodeLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(
            &serde_json::to_string(&HeaderLine {
                header: self.header.clone(),
            })
            .unwrap(),
        );
        out.push('\n');
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).unwrap());
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&SummaryLine {
                summary: self.summary.clone(),
            })
            .unwrap(),
        );
        out.push('\n');
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, LogError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut summary = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let corrupt = |message: String| LogError::Corrupt { line: lineno, message };
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(corrupt("content after summary record".into()));
            }
            if header.is_none() {
                let h: HeaderLine = serde_json::from_str(&line).map_err(|e| corrupt(format!("bad header: {e}")))?;
                h.header.map().map_err(|e| corrupt(format!("bad map in header: {e}")))?;
                header = Some(h.header);
            } else if line.starts_with("{\"summary\"") {
                let s: SummaryLine = serde_json::from_str(&line).map_err(|e| corrupt(format!("bad summary: {e}")))?;
                summary = Some(s.summary);
            } else {
                let ev: LogEvent = serde_json::from_str(&line).map_err(|e| corrupt(format!("bad event: {e}")))?;
                if let Some(prev) = events.last() {
                    let prev: &LogEvent = prev;
                    if ev.t < prev.t {
                        return Err(corrupt(format!("time went backwards ({} < {})", ev.t, prev.t)));
                    }
                }
                events.push(ev);
            }
        }
        let header = header.ok_or(LogError::Corrupt {
            line: 1,
            message: "missing header".into(),
        })?;
        let mut curve = RatioCurve::default();
        for ev in &events {
            curve.push(ev.t, ev.ratio);
        }
        let summary = summary.unwrap_or_else(|| EpisodeSummary {
            terminal_time_s: events.last().map(|e| e.t).unwrap_or(0.0),
            end_reason: EndReason::TimeCap,
            final_ratio: curve.final_ratio(),
            time_to_success_s: None,
            overlap_at_success: None,
        });
        let agents = header.spawns.len();
        Ok(EpisodeLog {
            header,
            events,
            curve,
            macros: vec![Vec::new(); agents],
            summary,
        })
    }
}
