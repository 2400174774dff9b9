use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::Value;

use super::body::snapshot_body;
use super::message::{Kind, WireMessage};
use super::{ErrorCode, ProtocolError, PROTOCOL_VERSION};
use crate::entity::{EntityRecord, SessionId, SERVER_OWNER};

#[derive(Clone, Debug)]
pub struct AdmissionPolicy {
    pub protocol_version: u64,
    pub max_room_size: usize,
    /// Admit into rooms that do not exist yet as if they were empty.
    pub auto_create: bool,
}

impl Default for AdmissionPolicy {
    fn default() -> Self {
        AdmissionPolicy {
            protocol_version: PROTOCOL_VERSION,
            max_room_size: 20,
            auto_create: true,
        }
    }
}

/// What admission needs to know about the target room.
#[derive(Clone, Debug, Default)]
pub struct RoomView<'a> {
    pub population: usize,
    pub entities: Vec<&'a EntityRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Admission {
    pub session: SessionId,
    pub welcome: WireMessage,
    pub snapshot: WireMessage,
}

/// Hands out session ids that are never reused within the process.
#[derive(Debug)]
pub struct SessionIdAllocator {
    prefix: String,
    next: AtomicU64,
}

impl SessionIdAllocator {
    pub fn new() -> Self {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let epoch = (nanos as u64) ^ (u64::from(std::process::id()) << 32);
        SessionIdAllocator::with_prefix(format!("s{:x}", epoch & 0xffff_ffff_ffff))
    }

    pub fn with_prefix(prefix: impl Into<String>) -> Self {
        SessionIdAllocator {
            prefix: prefix.into(),
            next: AtomicU64::new(1),
        }
    }

    pub fn next_id(&self) -> SessionId {
        let n = self.next.fetch_add(1, Ordering::Relaxed);
        SessionId(format!("{}-{n}", self.prefix))
    }
}

impl Default for SessionIdAllocator {
    fn default() -> Self {
        Self::new()
    }
}

/// Decides whether a `Hello` may join its room.
///
/// `room` is `None` when the room does not exist. On success the caller
/// sends `welcome` then `snapshot` to the new session.
pub fn admit(
    hello: &WireMessage,
    room: Option<RoomView<'_>>,
    policy: &AdmissionPolicy,
    ids: &SessionIdAllocator,
) -> Result<Admission, ProtocolError> {
    if hello.kind != Kind::Hello {
        return Err(ProtocolError::new(
            ErrorCode::Forbidden,
            format!("expected Hello, got {}", hello.kind),
        ));
    }
    let version = match hello.body.get("version") {
        None => return Err(ProtocolError::new(ErrorCode::MissingField, "body.version")),
        Some(v) => v.as_u64().ok_or_else(|| {
            ProtocolError::new(ErrorCode::SyntaxError, "body.version must be an unsigned integer")
        })?,
    };
    if version != policy.protocol_version {
        return Err(ProtocolError::new(
            ErrorCode::VersionMismatch,
            format!(
                "client speaks version {version}, server speaks {}",
                policy.protocol_version
            ),
        ));
    }
    let room = match room {
        Some(r) => r,
        None if policy.auto_create => RoomView::default(),
        None => {
            return Err(ProtocolError::new(
                ErrorCode::RoomUnknown,
                format!("no room {}", hello.room),
            ))
        }
    };
    if room.population >= policy.max_room_size {
        return Err(ProtocolError::new(
            ErrorCode::RoomFull,
            format!("room {} is full ({} sessions)", hello.room, room.population),
        ));
    }

    let session = ids.next_id();
    let welcome = WireMessage::new(Kind::Welcome, hello.room.clone())
        .from_sender(SERVER_OWNER)
        .with_field("session", Value::String(session.0.clone()))
        .with_field("version", policy.protocol_version)
        .with_field("max_room_size", policy.max_room_size as u64);
    let snapshot = WireMessage::new(Kind::Snapshot, hello.room.clone())
        .from_sender(SERVER_OWNER)
        .with_body(snapshot_body(room.entities));
    Ok(Admission {
        session,
        welcome,
        snapshot,
    })
}
