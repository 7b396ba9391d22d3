//! Envelope types and the newline-delimited text framing.
//!
//! One frame is one compact JSON object followed by `\n`:
//!
//! ```text
//! {"v":1,"session":"s1","client":"proxy","seq":1,"payload":{"type":"Hello","body":{...}}}
//! ```
//!
//! Fields are always emitted in that order, and payload body fields in declaration order.
//! Numbers use shortest round-trip rendering, so `decode(encode(e)) == e` bit for bit.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Axis;
use crate::protocol::state::{Change, SessionState};
use crate::{HapticCommand, Pose};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame is not newline-terminated")]
    IncompleteFrame,
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown payload tag `{0}`")]
    UnknownPayloadTag(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
}

fn valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_ID_LEN
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

macro_rules! token_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            /// Accepts 1–64 characters from `[A-Za-z0-9_.-]`.
            pub fn new(s: impl Into<String>) -> Result<Self, String> {
                let s = s.into();
                if valid_token(&s) {
                    Ok(Self(s))
                } else {
                    Err(format!("invalid {} `{}`", stringify!($name), s))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

token_type!(
    /// Opaque session token.
    SessionId
);
token_type!(
    /// Opaque client token. Ordered bytewise, which breaks last-writer ties.
    ClientId
);

impl ClientId {
    /// Sender id the hub uses for everything it originates.
    pub fn server() -> Self {
        Self("server".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Proxy,
    Renderer,
    Observer,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proxy" => Ok(Role::Proxy),
            "renderer" => Ok(Role::Renderer),
            "observer" => Ok(Role::Observer),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// Device capability flags announced in the handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    PreciseInput,
    Vibrotactile,
    HighResDisplay,
    SpatialDisplay,
    Stereo,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::PreciseInput,
        Capability::Vibrotactile,
        Capability::HighResDisplay,
        Capability::SpatialDisplay,
        Capability::Stereo,
    ];

    /// What a handheld proxy brings.
    pub fn phone() -> BTreeSet<Capability> {
        [Capability::PreciseInput, Capability::Vibrotactile, Capability::HighResDisplay].into()
    }

    /// What a headset brings.
    pub fn headset() -> BTreeSet<Capability> {
        [Capability::SpatialDisplay, Capability::Stereo].into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPx {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    OutOfBoundsCell,
    OutOfBoundsIndex,
    UnexpectedPayload,
    HandshakeRequired,
    UnknownSession,
    DuplicateClient,
    BadFrame,
}

/// Message body. Serialized adjacently tagged as `{"type": ..., "body": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", deny_unknown_fields)]
pub enum MessagePayload {
    Hello { role: Role, capabilities: BTreeSet<Capability> },
    TapScreen { point_px: PointPx },
    AxisTap { axis: Axis, index: usize },
    PoseUpdate { pose: Pose },
    ProjectRequest { axis: Axis, index: usize },
    SummarizeRequest {},
    ClearProjection {},
    HapticPulse { command: HapticCommand },
    StateDelta { changes: Vec<Change> },
    FullSnapshot { state: Box<SessionState> },
    Ack { seq: u64 },
    Error { code: ErrorCode, seq: u64, detail: String },
    Heartbeat {},
}

impl MessagePayload {
    pub const TAGS: [&'static str; 13] = [
        "Hello",
        "TapScreen",
        "AxisTap",
        "PoseUpdate",
        "ProjectRequest",
        "SummarizeRequest",
        "ClearProjection",
        "HapticPulse",
        "StateDelta",
        "FullSnapshot",
        "Ack",
        "Error",
        "Heartbeat",
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            MessagePayload::Hello { .. } => "Hello",
            MessagePayload::TapScreen { .. } => "TapScreen",
            MessagePayload::AxisTap { .. } => "AxisTap",
            MessagePayload::PoseUpdate { .. } => "PoseUpdate",
            MessagePayload::ProjectRequest { .. } => "ProjectRequest",
            MessagePayload::SummarizeRequest {} => "SummarizeRequest",
            MessagePayload::ClearProjection {} => "ClearProjection",
            MessagePayload::HapticPulse { .. } => "HapticPulse",
            MessagePayload::StateDelta { .. } => "StateDelta",
            MessagePayload::FullSnapshot { .. } => "FullSnapshot",
            MessagePayload::Ack { .. } => "Ack",
            MessagePayload::Error { .. } => "Error",
            MessagePayload::Heartbeat {} => "Heartbeat",
        }
    }

    /// Payloads only the hub may send.
    pub fn is_server_originated(&self) -> bool {
        matches!(
            self,
            MessagePayload::HapticPulse { .. }
                | MessagePayload::StateDelta { .. }
                | MessagePayload::FullSnapshot { .. }
                | MessagePayload::Ack { .. }
                | MessagePayload::Error { .. }
        )
    }

    /// Checks the payload's value invariants (unit quaternions, finite points, haptic bounds).
    pub fn validate(&self) -> Result<(), String> {
        match self {
            MessagePayload::TapScreen { point_px } if !(point_px.x.is_finite() && point_px.y.is_finite()) => {
                Err("tap point is not finite".into())
            }
            MessagePayload::PoseUpdate { pose } => pose.validate().map_err(|e| e.to_string()),
            MessagePayload::HapticPulse { command } => command.validate().map_err(|e| e.to_string()),
            MessagePayload::StateDelta { changes } => changes.iter().try_for_each(Change::validate),
            MessagePayload::FullSnapshot { state } => state.validate_values(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub protocol_version: u32,
    pub session_id: SessionId,
    pub client_id: ClientId,
    pub seq: u64,
    pub payload: MessagePayload,
}

impl Envelope {
    pub fn new(session_id: SessionId, client_id: ClientId, seq: u64, payload: MessagePayload) -> Self {
        Self { protocol_version: PROTOCOL_VERSION, session_id, client_id, seq, payload }
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    v: u32,
    session: &'a SessionId,
    client: &'a ClientId,
    seq: u64,
    payload: &'a MessagePayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    #[allow(dead_code)]
    v: u64,
    session: String,
    client: String,
    seq: u64,
    payload: RawPayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPayload {
    #[serde(rename = "type")]
    tag: String,
    #[serde(default)]
    body: Option<serde_json::Value>,
}

/// Serializes an envelope into one newline-terminated frame.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let wire = WireOut {
        v: env.protocol_version,
        session: &env.session_id,
        client: &env.client_id,
        seq: env.seq,
        payload: &env.payload,
    };
    let mut out = serde_json::to_vec(&wire).expect("envelope serialization is infallible");
    out.push(b'\n');
    out
}

/// Parses one frame, including its trailing newline.
pub fn decode(frame: &[u8]) -> Result<Envelope, DecodeError> {
    let malformed = |m: String| DecodeError::MalformedFrame(m);
    let body = frame.strip_suffix(b"\n").ok_or(DecodeError::IncompleteFrame)?;
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    if body.contains(&b'\n') {
        return Err(malformed("frame contains more than one line".into()));
    }
    let text = std::str::from_utf8(body).map_err(|e| malformed(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("v")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("missing protocol version `v`".into()))?;
    if version != u64::from(PROTOCOL_VERSION) {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let wire: WireIn = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    if !MessagePayload::TAGS.contains(&wire.payload.tag.as_str()) {
        return Err(DecodeError::UnknownPayloadTag(wire.payload.tag));
    }
    let tagged = serde_json::json!({
        "type": wire.payload.tag,
        "body": wire.payload.body.unwrap_or(serde_json::Value::Null),
    });
    let payload: MessagePayload = serde_json::from_value(tagged).map_err(|e| malformed(e.to_string()))?;
    payload.validate().map_err(malformed)?;
    Ok(Envelope {
        protocol_version: PROTOCOL_VERSION,
        session_id: SessionId::new(wire.session).map_err(malformed)?,
        client_id: ClientId::new(wire.client).map_err(malformed)?,
        seq: wire.seq,
        payload,
    })
}

/// Splits a byte stream into frames; the final element is any unterminated remainder.
pub fn split_frames(bytes: &[u8]) -> (Vec<&[u8]>, &[u8]) {
    let mut frames = Vec::new();
    let mut rest = bytes;
    while let Some(pos) = rest.iter().position(|&b| b == b'\n') {
        frames.push(&rest[..=pos]);
        rest = &rest[pos + 1..];
    }
    (frames, rest)
}
