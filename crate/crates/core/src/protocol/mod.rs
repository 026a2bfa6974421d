//! Wire protocol between SMEs, consoles and the location calculation server.
//!
//! One JSON document per line. Data messages travel in an [`Envelope`] that
//! carries the session, the sender, the sender's sequence number and the
//! schema version; connection housekeeping (handshake, acks, subscription,
//! close) uses [`Control`] frames.

mod registry;
pub mod server;
mod store;
mod transport;

pub use registry::{BaseStation, Ingest, Outbound, Reject, Session, SessionRegistry, SessionState, StoredReport};
pub use store::{write_event_log, SessionStore};
pub use transport::{Delivery, VirtualLink};

use crate::lcs::{Assignment, ContourMap, PlanPhase, PositionEstimate, SearchBoundary};
use crate::sme::{BearingProfile, MeasurementReport};
use crate::uplink::ChannelConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: &str = "1";

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(String),
    #[error("unknown message type: {0}")]
    UnknownType(String),
}

/// One entry of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time_s: f64,
    pub actor: String,
    pub event: String,
    #[serde(default)]
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedFrame,
    UnknownSession,
    UnregisteredSender,
    StaleSchema,
    AlreadyActive,
    TargetUnreachable,
    Unauthorized,
    BadRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case")]
pub enum Message {
    CallConnectRequest { target_id: String, requester: String },
    ChannelConfig(ChannelConfig),
    MeasurementReport(MeasurementReport),
    LocationEstimate { estimate: PositionEstimate, boundary: SearchBoundary },
    ContourMap(ContourMap),
    TaskAssignment { phase: PlanPhase, revision: u64, assignment: Assignment },
    SweepResult(BearingProfile),
    SessionEvent(EventRecord),
    Error { code: ErrorCode, detail: String },
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::CallConnectRequest { .. } => "call_connect_request",
            Message::ChannelConfig(_) => "channel_config",
            Message::MeasurementReport(_) => "measurement_report",
            Message::LocationEstimate { .. } => "location_estimate",
            Message::ContourMap(_) => "contour_map",
            Message::TaskAssignment { .. } => "task_assignment",
            Message::SweepResult(_) => "sweep_result",
            Message::SessionEvent(_) => "session_event",
            Message::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: String,
    pub session_id: String,
    pub sender: String,
    pub seq: u64,
    #[serde(flatten)]
    pub message: Message,
}

impl Envelope {
    pub fn new(session_id: impl Into<String>, sender: impl Into<String>, seq: u64, message: Message) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION.to_string(),
            session_id: session_id.into(),
            sender: sender.into(),
            seq,
            message,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sme,
    Console,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "control", rename_all = "snake_case")]
pub enum Control {
    Hello { role: Role, sender: String, token: String },
    Ack { session_id: String, seq: u64 },
    Subscribe { session_id: String },
    Close { session_id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Message(Envelope),
    Control(Control),
}

/// Encodes one envelope as a newline-terminated line.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let mut out = serde_json::to_vec(env).expect("envelope serializes");
    out.push(b'\n');
    out
}

pub fn encode_line(env: &Envelope) -> String {
    String::from_utf8(encode(env)).expect("json is utf-8")
}

pub fn encode_control(c: &Control) -> String {
    let mut s = serde_json::to_string(c).expect("control serializes");
    s.push('\n');
    s
}

pub fn encode_frame(f: &Frame) -> String {
    match f {
        Frame::Message(e) => encode_line(e),
        Frame::Control(c) => encode_control(c),
    }
}

fn strip_newline(bytes: &[u8]) -> &[u8] {
    let b = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    b.strip_suffix(b"\r").unwrap_or(b)
}

fn map_json_error(e: serde_json::Error) -> ProtocolError {
    let msg = e.to_string();
    if e.is_data() && msg.contains("unknown variant") {
        ProtocolError::UnknownType(msg)
    } else {
        ProtocolError::Malformed(msg)
    }
}

fn check_version(v: &str) -> Result<(), ProtocolError> {
    match v.split('.').next() {
        Some(SCHEMA_MAJOR) => Ok(()),
        _ => Err(ProtocolError::UnsupportedVersion(v.to_string())),
    }
}

#[derive(Deserialize)]
struct Header {
    schema_version: Option<String>,
    control: Option<serde::de::IgnoredAny>,
}

/// Decodes one line (with or without its trailing newline).
pub fn decode(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
    match decode_frame(bytes)? {
        Frame::Message(e) => Ok(e),
        Frame::Control(_) => Err(ProtocolError::Malformed("control frame where a message was expected".into())),
    }
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, ProtocolError> {
    let line = strip_newline(bytes);
    if line.contains(&b'\n') {
        return Err(ProtocolError::Malformed("more than one line".into()));
    }
    let header: Header = serde_json::from_slice(line).map_err(map_json_error)?;
    if header.control.is_some() {
        return serde_json::from_slice(line).map(Frame::Control).map_err(map_json_error);
    }
    let v = header
        .schema_version
        .ok_or_else(|| ProtocolError::Malformed("missing schema_version".into()))?;
    check_version(&v)?;
    serde_json::from_slice(line).map(Frame::Message).map_err(map_json_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(m: Message) -> Envelope {
        Envelope::new("s-1", "lcs", 7, m)
    }

    #[test]
    fn round_trip_and_framing() {
        let e = env(Message::CallConnectRequest { target_id: "target-1".into(), requester: "console-1".into() });
        let bytes = encode(&e);
        assert_eq!(*bytes.last().unwrap(), b'\n');
        assert_eq!(bytes.iter().filter(|b| **b == b'\n').count(), 1);
        assert_eq!(decode(&bytes).unwrap(), e);
        let line = String::from_utf8(bytes).unwrap();
        assert!(line.starts_with(r#"{"schema_version":"1.0","session_id":"s-1","sender":"lcs","seq":7,"type":"call_connect_request""#));
    }

    #[test]
    fn unknown_fields_ignored_and_minor_versions_accepted() {
        let line = r#"{"schema_version":"1.3","session_id":"s","sender":"a","seq":1,"extra":[1,2],"type":"error","body":{"code":"bad_request","detail":"x","more":true}}"#;
        let e = decode(line.as_bytes()).unwrap();
        assert_eq!(e.message, Message::Error { code: ErrorCode::BadRequest, detail: "x".into() });
    }

    #[test]
    fn errors() {
        let good = encode_line(&env(Message::Error { code: ErrorCode::BadRequest, detail: "d".into() }));
        assert!(matches!(decode(&good.as_bytes()[..good.len() / 2]), Err(ProtocolError::Malformed(_))));
        let wrong_type = good.replace("\"error\"", "\"teleport\"");
        assert!(matches!(decode(wrong_type.as_bytes()), Err(ProtocolError::UnknownType(_))));
        let v2 = good.replace("\"1.0\"", "\"2.0\"");
        assert_eq!(decode(v2.as_bytes()), Err(ProtocolError::UnsupportedVersion("2.0".into())));
        assert!(matches!(decode(b"[1,2]"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(decode(b""), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn control_frames() {
        let c = Control::Hello { role: Role::Console, sender: "console-1".into(), token: "t".into() };
        let line = encode_control(&c);
        assert_eq!(line, "{\"control\":\"hello\",\"role\":\"console\",\"sender\":\"console-1\",\"token\":\"t\"}\n");
        assert_eq!(decode_frame(line.as_bytes()).unwrap(), Frame::Control(c));
        assert!(decode(line.as_bytes()).is_err());
    }
}
