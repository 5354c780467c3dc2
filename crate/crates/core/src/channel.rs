//! Hub-spoke channel framing.
//!
//! Every frame starts with a big-endian u32 length counting the tag byte and
//! body. Tags 0-3 are collaboration records in their normative wire layout;
//! tag 0x80 carries a JSON control message.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::apps::AppManifest;
use crate::isc::{self, FailureCode, IscEnvelope, ValidationRules, WireError};
use crate::llm::{BackendSpec, ChatTurn, ToolSchema};
use crate::memory::WorkingMemory;
use crate::sandbox::Isolation;

pub const TAG_CONTROL: u8 = 0x80;
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpokeMode {
    Standard,
    Vanilla,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Pending {
    None,
    UserData(String),
    Collaboration(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpokeOutcome {
    pub response: String,
    pub tool_trace: Vec<String>,
    pub pending: Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    EmptyQuery,
    PlanningFailure,
    ContextWindowExceeded,
    Backend,
    Protocol,
}

/// Non-collaboration traffic between the hub and one spoke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Control {
    // spoke -> hub
    Ready { isolation: Isolation },
    NeedUserData { entity: String },
    Confirm { tool: String, preview: String },
    ToolEvent { tool: String, args: Value, ok: bool },
    Prompt { phase: String, text: String, micros: u64 },
    Egress { url: String, body: String },
    Llm { messages: Vec<ChatTurn>, tools: Vec<ToolSchema> },
    Outcome { outcome: SpokeOutcome },
    Failed { kind: FailureKind, message: String },
    // hub -> spoke
    Init {
        app: Option<Box<AppManifest>>,
        mode: SpokeMode,
        broadcast: Vec<String>,
        backend: BackendSpec,
        rules: ValidationRules,
    },
    Invoke { query: String, bootstrap: Vec<(String, String)>, context: WorkingMemory },
    Synthesize { query: String, responses: Vec<String> },
    UserData { entity: String, value: Option<String> },
    ConfirmResult { approved: bool },
    IscFailure { code: FailureCode },
    EgressResult { ok: bool, body: String },
    LlmResult { turn: Option<ChatTurn>, error: Option<String> },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Isc(IscEnvelope),
    Control(Control),
    /// A collaboration-tagged frame that failed to decode.
    Garbled(WireError),
}

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("channel closed")]
    Closed,
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("bad control frame: {0}")]
    BadControl(String),
    #[error("unknown frame tag {0:#x}")]
    Tag(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, ChannelError> {
    match frame {
        Frame::Isc(env) => isc::encode(env).map_err(|e| ChannelError::BadControl(e.to_string())),
        Frame::Control(c) => {
            let body = serde_json::to_vec(c).map_err(|e| ChannelError::BadControl(e.to_string()))?;
            let len = body.len() + 1;
            if len > MAX_FRAME {
                return Err(ChannelError::TooLarge(len));
            }
            let mut out = Vec::with_capacity(len + 4);
            out.extend_from_slice(&(len as u32).to_be_bytes());
            out.push(TAG_CONTROL);
            out.extend_from_slice(&body);
            Ok(out)
        }
        Frame::Garbled(e) => Err(ChannelError::BadControl(e.to_string())),
    }
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> Result<(), ChannelError> {
    let bytes = encode_frame(frame)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Writes raw bytes as one frame body; used to inject malformed records.
pub fn write_raw<W: Write + ?Sized>(w: &mut W, record: &[u8]) -> Result<(), ChannelError> {
    w.write_all(record)?;
    w.flush()?;
    Ok(())
}

pub fn decode_frame(record: &[u8]) -> Result<Frame, ChannelError> {
    let tag = *record.get(4).ok_or(ChannelError::Closed)?;
    match tag {
        isc::TAG_PROBE..=isc::TAG_RESPONSE => Ok(match isc::decode(record) {
            Ok(env) => Frame::Isc(env),
            Err(e) => Frame::Garbled(e),
        }),
        TAG_CONTROL => serde_json::from_slice(&record[5..])
            .map(Frame::Control)
            .map_err(|e| ChannelError::BadControl(e.to_string())),
        other => Err(ChannelError::Tag(other)),
    }
}

pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Frame, ChannelError> {
    let mut len = [0u8; 4];
    if let Err(e) = r.read_exact(&mut len) {
        return Err(if e.kind() == io::ErrorKind::UnexpectedEof { ChannelError::Closed } else { e.into() });
    }
    let n = u32::from_be_bytes(len) as usize;
    if n == 0 {
        return Err(ChannelError::Tag(0xff));
    }
    if n > MAX_FRAME {
        return Err(ChannelError::TooLarge(n));
    }
    let mut record = vec![0u8; n + 4];
    record[..4].copy_from_slice(&len);
    r.read_exact(&mut record[4..]).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ChannelError::Closed
        } else {
            e.into()
        }
    })?;
    decode_frame(&record)
}
