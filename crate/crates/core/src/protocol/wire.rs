//! Message vocabulary and length-prefixed framing.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::injection::{InjectionEvent, InjectionPoint, InjectorStateSnapshot, PointId};
use crate::telemetry::MetricsSnapshot;

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames larger than this are a framing error on both sides.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub version: u32,
    pub correlation_id: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl Message {
    pub fn new(correlation_id: u64, body: Body) -> Self {
        Message {
            version: PROTOCOL_VERSION,
            correlation_id,
            body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "msg_type", content = "payload")]
pub enum Body {
    #[serde(rename = "HELLO")]
    Hello { peer: String },
    #[serde(rename = "REGISTER_POINTS")]
    RegisterPoints { points: Vec<InjectionPoint> },
    #[serde(rename = "ACTIVATE")]
    Activate { point_id: PointId, duration_ms: u64 },
    #[serde(rename = "DEACTIVATE")]
    Deactivate { point_id: PointId },
    #[serde(rename = "QUERY")]
    Query { what: QueryWhat },
    #[serde(rename = "REPORT")]
    Report { result: ReportPayload },
    #[serde(rename = "EVENT")]
    Event { event: EventPayload },
    #[serde(rename = "ERROR")]
    Error { message: String },
    #[serde(rename = "BYE")]
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "kebab-case")]
pub enum QueryWhat {
    Counters { point_id: Option<PointId> },
    Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "kebab-case")]
pub enum ReportPayload {
    Ack {
        point_id: PointId,
        state: InjectorStateSnapshot,
    },
    Counters {
        counters: Vec<(PointId, InjectorStateSnapshot)>,
    },
    Metrics {
        snapshot: MetricsSnapshot,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventPayload {
    Injection { injection: InjectionEvent },
    Heartbeat { seq: u64 },
    Warning { message: String },
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Encode a message into one complete frame (prefix + body).
pub fn encode(message: &Message) -> Result<Vec<u8>, FrameError> {
    let body = serde_json::to_vec(message).map_err(|e| FrameError::Malformed(e.to_string()))?;
    if body.len() > MAX_FRAME_LEN {
        return Err(FrameError::Oversize(body.len()));
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Decode one complete frame. A short buffer is a truncation error; no
/// partial message is ever surfaced.
pub fn decode(frame: &[u8]) -> Result<Message, FrameError> {
    if frame.len() < 4 {
        return Err(FrameError::Truncated);
    }
    let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::Oversize(len));
    }
    if frame.len() < 4 + len {
        return Err(FrameError::Truncated);
    }
    serde_json::from_slice(&frame[4..4 + len]).map_err(|e| FrameError::Malformed(e.to_string()))
}

pub fn write_message(writer: &mut impl Write, message: &Message) -> Result<(), FrameError> {
    let frame = encode(message)?;
    writer.write_all(&frame)?;
    writer.flush()?;
    Ok(())
}

pub fn read_message(reader: &mut impl Read) -> Result<Message, FrameError> {
    let mut prefix = [0u8; 4];
    reader.read_exact(&mut prefix)?;
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::Oversize(len));
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    serde_json::from_slice(&body).map_err(|e| FrameError::Malformed(e.to_string()))
}
