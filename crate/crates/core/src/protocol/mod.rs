//! Wire protocol between the controller and each agent/sidecar pair.
//!
//! Frames are a 4-byte big-endian length prefix followed by a UTF-8 JSON
//! message body; this format is the only wire contract and must stay
//! bit-exact across implementations. Agents listen; the controller connects.

mod server;
mod session;
mod wire;

pub use server::{AgentServer, ServerOptions};
pub use session::{AgentSession, SessionError, SessionOptions, TimedEvent};
pub use wire::{
    decode, encode, read_message, write_message, Body, EventPayload, FrameError, Message,
    QueryWhat, ReportPayload, MAX_FRAME_LEN, PROTOCOL_VERSION,
};
