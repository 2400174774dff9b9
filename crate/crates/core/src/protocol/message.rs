use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Message kinds, spelled exactly as on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Hello,
    Welcome,
    Snapshot,
    EntityCreate,
    EntityUpdate,
    EntityDelete,
    OwnershipRequest,
    OwnershipGrant,
    Presence,
    Ping,
    Pong,
    Bye,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 13] = [
        Kind::Hello,
        Kind::Welcome,
        Kind::Snapshot,
        Kind::EntityCreate,
        Kind::EntityUpdate,
        Kind::EntityDelete,
        Kind::OwnershipRequest,
        Kind::OwnershipGrant,
        Kind::Presence,
        Kind::Ping,
        Kind::Pong,
        Kind::Bye,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "Hello",
            Kind::Welcome => "Welcome",
            Kind::Snapshot => "Snapshot",
            Kind::EntityCreate => "EntityCreate",
            Kind::EntityUpdate => "EntityUpdate",
            Kind::EntityDelete => "EntityDelete",
            Kind::OwnershipRequest => "OwnershipRequest",
            Kind::OwnershipGrant => "OwnershipGrant",
            Kind::Presence => "Presence",
            Kind::Ping => "Ping",
            Kind::Pong => "Pong",
            Kind::Bye => "Bye",
            Kind::Error => "Error",
        }
    }

    /// Kinds that carry `entity` and `seq`.
    pub fn is_update_bearing(self) -> bool {
        matches!(self, Kind::EntityCreate | Kind::EntityUpdate | Kind::EntityDelete)
    }

    /// Kinds that name an entity.
    pub fn needs_entity(self) -> bool {
        self.is_update_bearing() || matches!(self, Kind::OwnershipRequest | Kind::OwnershipGrant)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DecodeError::UnknownKind(s.to_owned()))
    }
}

pub type Body = Map<String, Value>;

/// One protocol frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WireMessage {
    pub kind: Kind,
    pub room: String,
    pub sender: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub body: Body,
    /// Sender wall clock in milliseconds. Diagnostic only.
    #[serde(rename = "ts")]
    pub ts_ms: u64,
}

impl WireMessage {
    pub fn new(kind: Kind, room: impl Into<String>) -> Self {
        WireMessage {
            kind,
            room: room.into(),
            sender: String::new(),
            entity: None,
            seq: None,
            body: Body::new(),
            ts_ms: 0,
        }
    }

    pub fn from_sender(mut self, sender: impl Into<String>) -> Self {
        self.sender = sender.into();
        self
    }

    pub fn for_entity(mut self, entity: impl Into<String>, seq: u64) -> Self {
        self.entity = Some(entity.into());
        self.seq = Some(seq);
        self
    }

    pub fn with_entity(mut self, entity: impl Into<String>) -> Self {
        self.entity = Some(entity.into());
        self
    }

    pub fn with_body(mut self, body: Body) -> Self {
        self.body = body;
        self
    }

    pub fn with_field(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.body.insert(key.to_owned(), value.into());
        self
    }

    pub fn at(mut self, ts_ms: u64) -> Self {
        self.ts_ms = ts_ms;
        self
    }

    pub fn entity_id(&self) -> Option<&str> {
        self.entity.as_deref()
    }

    pub fn body_str(&self, key: &str) -> Option<&str> {
        self.body.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    Syntax(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` must be {expected}")]
    InvalidField { field: String, expected: &'static str },
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
}

/// Encodes a message as one JSON text frame.
pub fn encode(msg: &WireMessage) -> String {
    serde_json::to_string(msg).expect("wire messages always serialize")
}

pub fn decode(frame: &[u8]) -> Result<WireMessage, DecodeError> {
    let text = std::str::from_utf8(frame).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    decode_str(text)
}

pub fn decode_str(frame: &str) -> Result<WireMessage, DecodeError> {
    let value: Value =
        serde_json::from_str(frame).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(DecodeError::Syntax("frame is not a JSON object".into()));
    };

    let kind = match obj.remove("kind") {
        None => return Err(DecodeError::MissingField("kind".into())),
        Some(Value::String(s)) => s.parse::<Kind>()?,
        Some(_) => return Err(invalid("kind", "a string")),
    };
    let room = match obj.remove("room") {
        None => return Err(DecodeError::MissingField("room".into())),
        Some(Value::String(s)) => s,
        Some(_) => return Err(invalid("room", "a string")),
    };
    let sender = match obj.remove("sender") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s,
        Some(_) => return Err(invalid("sender", "a string")),
    };
    let entity = match obj.remove("entity") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(invalid("entity", "a string")),
    };
    let seq = match obj.remove("seq") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| invalid("seq", "an unsigned integer"))?),
    };
    let body = match obj.remove("body") {
        None | Some(Value::Null) => Body::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(invalid("body", "an object")),
    };
    let ts_ms = match obj.remove("ts") {
        None | Some(Value::Null) => 0,
        Some(v) => v.as_u64().ok_or_else(|| invalid("ts", "an unsigned integer"))?,
    };

    if kind.needs_entity() && entity.is_none() {
        return Err(DecodeError::MissingField("entity".into()));
    }
    if kind.is_update_bearing() && seq.is_none() {
        return Err(DecodeError::MissingField("seq".into()));
    }

    Ok(WireMessage {
        kind,
        room,
        sender,
        entity,
        seq,
        body,
        ts_ms,
    })
}

fn invalid(field: &str, expected: &'static str) -> DecodeError {
    DecodeError::InvalidField {
        field: field.to_owned(),
        expected,
    }
}
