//! World model and wire protocol for openverse rooms.
//!
//! Worlds are declarative descriptions of entities (ECS containers of named
//! components), portals to other worlds and assets. A world is served as a
//! single HTML document and replicated to participants through a JSON
//! protocol in which each entity has one owner and a monotone `seq`.

pub mod animation;
pub mod component;
pub mod document;
pub mod entity;
mod hello;
pub mod protocol;
pub mod region;
pub mod replica;
pub mod world;

use serde::Serialize;
use thiserror::Error;

pub use animation::animate_rotation;
pub use component::{
    normalize_degrees, ComponentData, ComponentError, ComponentState, Scalar, Transform, TRANSFORM,
};
pub use document::{emit_world_document, emit_world_document_with};
pub use entity::{
    apply_component_update, EntityRecord, Owner, SessionId, UpdateOutcome, SERVER_OWNER,
};
pub use hello::{hello_world, HELLO_TEXTURE_PATH, HELLO_WORLD_ID};
pub use region::{region_of, RegionCoord, REGION_AREA, REGION_SIDE};
pub use replica::{Replica, ReplicaEvent};
pub use world::{
    validate_world, validate_world_with, AssetRef, EntityTemplate, OpenMode, Portal, Rule,
    ValidationOptions, Violation, WorldDescription,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("position ({px}, {pz}) is not finite")]
    InvalidPosition { px: f64, pz: f64 },
    #[error("invalid animation: {0}")]
    InvalidAnimation(String),
    #[error("invalid world: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidWorld(Vec<Violation>),
    #[error("sync endpoint {0:?} is not a ws:// or wss:// URL")]
    InvalidEndpoint(String),
    #[error(transparent)]
    InvalidComponent(#[from] ComponentError),
}

/// Canonical JSON for a sequence of entities: struct fields in declaration
/// order, maps sorted by key.
pub fn canonical_entities<'a>(entities: impl IntoIterator<Item = &'a EntityRecord>) -> String {
    let list: Vec<&EntityRecord> = entities.into_iter().collect();
    canonical_json(&list)
}

pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("value serializes")
}
