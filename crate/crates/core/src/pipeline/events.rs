//! Persistent alert events: one JSON object per line, flushed per event so a
//! crash can tear at most the final line, which the reader tolerates.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::pipeline::AlertMode;

/// What a sink is being told.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkKind {
    Enter,
    Clear,
    Fault,
}

impl SinkKind {
    /// Stable lowercase token, used in sink argv and log lines.
    pub fn token(self) -> &'static str {
        match self {
            SinkKind::Enter => "enter",
            SinkKind::Clear => "clear",
            SinkKind::Fault => "fault",
        }
    }
}

/// Outcome of one sink invocation, recorded in the event that fired it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkResult {
    pub sink: String,
    pub kind: SinkKind,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// One frame's ledger entry: the state transition, what was seen, where the
/// laser points (normalized pan/tilt), and how the sinks fared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    /// UTC wall clock, milliseconds since the epoch.
    pub timestamp_ms: u64,
    pub frame_id: u64,
    pub from: AlertMode,
    pub to: AlertMode,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_target: Option<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laser_pose: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sink_results: Vec<SinkResult>,
    /// Set when the frame was processed in a fault path (detector failure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AlertEvent {
    /// An episode begins only from IDLE; a CLEARING -> ALERT_ACTIVE resume
    /// stays inside the same episode.
    pub fn is_enter(&self) -> bool {
        self.from == AlertMode::Idle && self.to == AlertMode::AlertActive
    }

    /// An episode ends: leaving the active/clearing pair for IDLE.
    pub fn is_clear(&self) -> bool {
        self.to == AlertMode::Idle && self.from != AlertMode::Idle
    }
}

/// Append-only event log writer; every event is flushed before returning.
pub struct EventWriter {
    out: BufWriter<File>,
}

impl EventWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, event: &AlertEvent) -> std::io::Result<()> {
        let line = serde_json::to_string(event).expect("event serializes");
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

/// Reads an event log back. A torn final line (crash artifact) is skipped;
/// malformed interior lines are real corruption and fail.
pub fn read_events(path: &Path) -> std::io::Result<Vec<AlertEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(ev) => events.push(ev),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("skipping torn final event line: {e}");
            }
            Err(e) => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("corrupt event log at line {}: {e}", i + 1),
                ));
            }
        }
    }
    Ok(events)
}
