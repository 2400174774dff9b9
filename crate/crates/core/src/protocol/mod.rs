//! Wire protocol shared by the server, the load harness and browser clients.
//!
//! Frames are JSON text with a fixed envelope:
//! `{"kind", "room", "sender", "entity", "seq", "body", "ts"}`.
//! Ordering is per entity and driven only by `seq`; `ts` is informational.

mod admission;
mod body;
mod message;
mod ownership;

use std::fmt;

use serde_json::json;
use thiserror::Error;

pub use admission::{admit, Admission, AdmissionPolicy, RoomView, SessionIdAllocator};
pub use body::{
    create_body, entity_from_create, grant_body, record_from_grant, snapshot_body,
    snapshot_entities, update_body, update_from_body, BodyError,
};
pub use message::{decode, decode_str, encode, Body, DecodeError, Kind, WireMessage};
pub use ownership::{resolve_ownership, OwnershipRecord};

/// Current protocol version. Mismatches are fatal at `Hello`.
pub const PROTOCOL_VERSION: u64 = 1;

/// Reason codes carried by `Error` frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    VersionMismatch,
    RoomFull,
    RoomUnknown,
    NoSuchEntity,
    Forbidden,
    SyntaxError,
    MissingField,
    UnknownKind,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::VersionMismatch => "VersionMismatch",
            ErrorCode::RoomFull => "RoomFull",
            ErrorCode::RoomUnknown => "RoomUnknown",
            ErrorCode::NoSuchEntity => "NoSuchEntity",
            ErrorCode::Forbidden => "Forbidden",
            ErrorCode::SyntaxError => "SyntaxError",
            ErrorCode::MissingField => "MissingField",
            ErrorCode::UnknownKind => "UnknownKind",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        [
            ErrorCode::VersionMismatch,
            ErrorCode::RoomFull,
            ErrorCode::RoomUnknown,
            ErrorCode::NoSuchEntity,
            ErrorCode::Forbidden,
            ErrorCode::SyntaxError,
            ErrorCode::MissingField,
            ErrorCode::UnknownKind,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rejection addressed to the offending session.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{code}: {detail}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub detail: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        ProtocolError {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_message(&self, room: &str) -> WireMessage {
        let mut msg = WireMessage::new(Kind::Error, room).from_sender(crate::SERVER_OWNER);
        msg.body = json!({"code": self.code.as_str(), "detail": self.detail})
            .as_object()
            .cloned()
            .unwrap_or_default();
        msg
    }

    /// Reads the code and detail back out of an `Error` frame.
    pub fn from_message(msg: &WireMessage) -> Option<ProtocolError> {
        if msg.kind != Kind::Error {
            return None;
        }
        let code = ErrorCode::parse(msg.body_str("code")?)?;
        Some(ProtocolError::new(code, msg.body_str("detail").unwrap_or("")))
    }
}

impl From<DecodeError> for ProtocolError {
    fn from(e: DecodeError) -> Self {
        let code = match &e {
            DecodeError::Syntax(_) | DecodeError::InvalidField { .. } => ErrorCode::SyntaxError,
            DecodeError::MissingField(_) => ErrorCode::MissingField,
            DecodeError::UnknownKind(_) => ErrorCode::UnknownKind,
        };
        ProtocolError::new(code, e.to_string())
    }
}

impl From<BodyError> for ProtocolError {
    fn from(e: BodyError) -> Self {
        let code = match &e {
            BodyError::Missing(_) => ErrorCode::MissingField,
            BodyError::Component(crate::ComponentError::MissingField(_)) => ErrorCode::MissingField,
            _ => ErrorCode::SyntaxError,
        };
        ProtocolError::new(code, e.to_string())
    }
}
