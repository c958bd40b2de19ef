//! Transcript ingestion.
//!
//! Transcript events come either from a live speech-to-text client (pushed
//! over the session protocol or a channel) or from a replay file. Both end up
//! as the same ordered stream of [`TranscriptEvent`]s.
//!
//! Replay file format, one event per line:
//!
//! ```text
//! t_ms<TAB>speaker<TAB>final|partial<TAB>loudness|-<TAB>text[<TAB>end_ms]
//! ```
//!
//! `speaker` is `U` (user) or `P` (partner). Lines starting with `#` and blank
//! lines are skipped. The optional trailing `end_ms` column is only used by the
//! analytics pipeline; text therefore cannot contain tab characters.

use std::path::Path;
use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "U")]
    User,
    #[serde(rename = "P")]
    Partner,
}

impl Speaker {
    pub fn code(self) -> &'static str {
        match self {
            Speaker::User => "U",
            Speaker::Partner => "P",
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::User => Speaker::Partner,
            Speaker::Partner => Speaker::User,
        }
    }
}

/// One timestamped, speaker-tagged recognition result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub t_ms: u64,
    pub speaker: Speaker,
    pub text: String,
    pub is_final: bool,
    /// Relative input level in `[0, 1]`, when the source reports one.
    pub loudness: Option<f64>,
    /// End of the utterance, when known (replay files only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Provider,
    ReplayFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub user_only: bool,
    pub loudness_threshold: f64,
    pub source: SourceKind,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            user_only: true,
            loudness_threshold: 0.3,
            source: SourceKind::Provider,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loudness_threshold) {
            return Err(format!(
                "loudness_threshold must be in [0, 1], got {}",
                self.loudness_threshold
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("replay file not found: {0}")]
    MissingFile(String),
    #[error("malformed replay at line {line}: {reason}")]
    MalformedReplay { line: usize, reason: String },
    #[error("i/o error reading replay: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered stream of transcript events.
pub enum TranscriptStream {
    Replay(std::vec::IntoIter<TranscriptEvent>),
    Channel(Receiver<TranscriptEvent>),
}

impl TranscriptStream {
    /// Stream fed by a live recognizer client.
    pub fn from_channel(rx: Receiver<TranscriptEvent>) -> Self {
        TranscriptStream::Channel(rx)
    }
}

impl Iterator for TranscriptStream {
    type Item = TranscriptEvent;

    fn next(&mut self) -> Option<TranscriptEvent> {
        match self {
            TranscriptStream::Replay(it) => it.next(),
            TranscriptStream::Channel(rx) => rx.recv().ok(),
        }
    }
}

pub fn open_replay(path: impl AsRef<Path>) -> Result<TranscriptStream, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::MissingFile(path.display().to_string()),
        _ => IngestError::Io(e),
    })?;
    let events = parse_replay(&text)?;
    Ok(TranscriptStream::Replay(events.into_iter()))
}

pub fn parse_replay(text: &str) -> Result<Vec<TranscriptEvent>, IngestError> {
    let mut events: Vec<TranscriptEvent> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let ev = parse_replay_line(line).map_err(|reason| IngestError::MalformedReplay {
            line: line_no,
            reason,
        })?;
        if let Some(prev) = events.last() {
            if ev.t_ms < prev.t_ms {
                return Err(IngestError::MalformedReplay {
                    line: line_no,
                    reason: format!("t_ms {} is earlier than previous {}", ev.t_ms, prev.t_ms),
                });
            }
        }
        events.push(ev);
    }
    Ok(events)
}

fn parse_replay_line(line: &str) -> Result<TranscriptEvent, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 && fields.len() != 6 {
        return Err(format!("expected 5 or 6 tab-separated fields, got {}", fields.len()));
    }
    let t_ms = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("bad t_ms {:?}: {e}", fields[0]))?;
    let speaker = match fields[1].trim() {
        "U" => Speaker::User,
        "P" => Speaker::Partner,
        other => return Err(format!("unknown speaker {other:?}")),
    };
    let is_final = match fields[2].trim() {
        "final" => true,
        "partial" => false,
        other => return Err(format!("expected final|partial, got {other:?}")),
    };
    let loudness = match fields[3].trim() {
        "-" => None,
        s => {
            let v = s.parse::<f64>().map_err(|e| format!("bad loudness {s:?}: {e}"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("loudness {v} outside [0, 1]"));
            }
            Some(v)
        }
    };
    let text = fields[4].to_string();
    if is_final && text.trim().is_empty() {
        return Err("final event with empty text".into());
    }
    let end_ms = match fields.get(5) {
        Some(s) => {
            let end = s.trim().parse::<u64>().map_err(|e| format!("bad end_ms {s:?}: {e}"))?;
            if end < t_ms {
                return Err(format!("end_ms {end} before t_ms {t_ms}"));
            }
            Some(end)
        }
        None => None,
    };
    Ok(TranscriptEvent {
        t_ms,
        speaker,
        text,
        is_final,
        loudness,
        end_ms,
    })
}

/// Formats an event as one replay line (no trailing newline).
pub fn format_replay_line(ev: &TranscriptEvent) -> String {
    let loud = ev.loudness.map_or_else(|| "-".to_string(), |l| l.to_string());
    let kind = if ev.is_final { "final" } else { "partial" };
    let mut line = format!("{}\t{}\t{}\t{}\t{}", ev.t_ms, ev.speaker.code(), kind, loud, ev.text);
    if let Some(end) = ev.end_ms {
        line.push('\t');
        line.push_str(&end.to_string());
    }
    line
}

/// Drops events the recognizer should not hear. Passed events are returned as-is.
pub fn filter_event(ev: TranscriptEvent, cfg: &IngestConfig) -> Option<TranscriptEvent> {
    if cfg.user_only {
        if ev.speaker == Speaker::Partner {
            return None;
        }
        if matches!(ev.loudness, Some(l) if l < cfg.loudness_threshold) {
            return None;
        }
    }
    Some(ev)
}

/// Space-joined text of the final events in `[now_ms - window_ms, now_ms]`,
/// in chronological order.
pub fn accumulate_window(events: &[TranscriptEvent], window_ms: u64, now_ms: u64) -> String {
    let start = now_ms.saturating_sub(window_ms);
    let mut parts: Vec<&TranscriptEvent> = events
        .iter()
        .filter(|e| e.is_final && e.t_ms >= start && e.t_ms <= now_ms)
        .collect();
    parts.sort_by_key(|e| e.t_ms);
    parts
        .iter()
        .map(|e| e.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
