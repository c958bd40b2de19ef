//! Wire protocol: one UTF-8 JSON object per line, `ty` names the message and
//! `t` carries session milliseconds. Unknown fields are ignored on decode;
//! unknown `ty` values are rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::config::Condition;
use super::SessionSnapshot;
use crate::ingest::Speaker;

pub const PROTO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Renderer,
    Driver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<crate::geometry::PixelRect> for Rect {
    fn from(r: crate::geometry::PixelRect) -> Self {
        Rect {
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ty", rename_all = "snake_case")]
pub enum Message {
    // inbound
    Hello {
        t: u64,
        proto_version: u32,
        role: Role,
    },
    FaceObs {
        t: u64,
        le: [f64; 3],
        re: [f64; 3],
        nb: [f64; 3],
    },
    Gaze {
        t: u64,
        x: f64,
        y: f64,
        valid: bool,
    },
    Transcript {
        t: u64,
        spk: Speaker,
        fin: bool,
        loud: Option<f64>,
        text: String,
    },
    SetCondition {
        t: u64,
        cond: Condition,
    },
    SnapshotRequest {
        t: u64,
    },
    // outbound
    LayoutUpdate {
        t: u64,
        circle: Circle,
        text_rect: Rect,
        lowered: bool,
        /// False while the partner's face is lost.
        visible: bool,
        /// Rim width holding the dwell arcs, inside `circle.r`.
        ring_w: f64,
        n_arcs: usize,
    },
    HintUpdate {
        t: u64,
        seq: u64,
        keywords: Vec<String>,
        lines: Vec<String>,
        /// `None` when the bundle was cleared.
        expires_at: Option<u64>,
    },
    ToggleState {
        t: u64,
        enabled: bool,
    },
    ShiftDown {
        t: u64,
    },
    ShiftUp {
        t: u64,
    },
    DwellProgress {
        t: u64,
        arc: Option<usize>,
        frac: f64,
    },
    Error {
        t: u64,
        code: String,
        detail: String,
    },
    Snapshot {
        t: u64,
        snapshot: Box<SessionSnapshot>,
    },
}

pub const MESSAGE_TYPES: &[&str] = &[
    "hello",
    "face_obs",
    "gaze",
    "transcript",
    "set_condition",
    "snapshot_request",
    "layout_update",
    "hint_update",
    "toggle_state",
    "shift_down",
    "shift_up",
    "dwell_progress",
    "error",
    "snapshot",
];

impl Message {
    pub fn t(&self) -> u64 {
        match self {
            Message::Hello { t, .. }
            | Message::FaceObs { t, .. }
            | Message::Gaze { t, .. }
            | Message::Transcript { t, .. }
            | Message::SetCondition { t, .. }
            | Message::SnapshotRequest { t }
            | Message::LayoutUpdate { t, .. }
            | Message::HintUpdate { t, .. }
            | Message::ToggleState { t, .. }
            | Message::ShiftDown { t }
            | Message::ShiftUp { t }
            | Message::DwellProgress { t, .. }
            | Message::Error { t, .. }
            | Message::Snapshot { t, .. } => *t,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::FaceObs { .. } => "face_obs",
            Message::Gaze { .. } => "gaze",
            Message::Transcript { .. } => "transcript",
            Message::SetCondition { .. } => "set_condition",
            Message::SnapshotRequest { .. } => "snapshot_request",
            Message::LayoutUpdate { .. } => "layout_update",
            Message::HintUpdate { .. } => "hint_update",
            Message::ToggleState { .. } => "toggle_state",
            Message::ShiftDown { .. } => "shift_down",
            Message::ShiftUp { .. } => "shift_up",
            Message::DwellProgress { .. } => "dwell_progress",
            Message::Error { .. } => "error",
            Message::Snapshot { .. } => "snapshot",
        }
    }

    pub fn is_inbound(&self) -> bool {
        matches!(
            self,
            Message::Hello { .. }
                | Message::FaceObs { .. }
                | Message::Gaze { .. }
                | Message::Transcript { .. }
                | Message::SetCondition { .. }
                | Message::SnapshotRequest { .. }
        )
    }

    pub fn error(t: u64, code: &str, detail: impl Into<String>) -> Message {
        Message::Error {
            t,
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("malformed frame at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unknown message type {0:?}")]
    UnknownType(String),
}

/// Serializes one frame, newline-terminated.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = serde_json::to_vec(msg).expect("message serialization is infallible");
    out.push(b'\n');
    out
}

pub fn encode_line(msg: &Message) -> String {
    String::from_utf8(encode(msg)).expect("serde_json emits UTF-8")
}

fn byte_offset(err: &serde_json::Error) -> usize {
    // single-line frames: column is 1-based
    err.column().saturating_sub(1)
}

/// Parses one frame. A trailing `\n` (or `\r\n`) is optional.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError::Malformed {
        offset: e.valid_up_to(),
        reason: "invalid UTF-8".into(),
    })?;
    let line = text.strip_suffix('\n').unwrap_or(text);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if let Some(pos) = line.find('\n') {
        return Err(DecodeError::Malformed {
            offset: pos,
            reason: "embedded newline".into(),
        });
    }
    let value: Value = serde_json::from_str(line).map_err(|e| DecodeError::Malformed {
        offset: byte_offset(&e),
        reason: e.to_string(),
    })?;
    let ty = value
        .get("ty")
        .and_then(Value::as_str)
        .ok_or_else(|| DecodeError::Malformed {
            offset: 0,
            reason: "missing string field `ty`".into(),
        })?;
    if !MESSAGE_TYPES.contains(&ty) {
        return Err(DecodeError::UnknownType(ty.to_string()));
    }
    serde_json::from_str(line).map_err(|e| DecodeError::Malformed {
        offset: byte_offset(&e),
        reason: e.to_string(),
    })
}
