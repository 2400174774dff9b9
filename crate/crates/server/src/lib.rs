//! Authoritative room server: per-room reducers, persistence, and the
//! HTTP/WebSocket service around them.

pub mod config;
pub mod hub;
pub mod persist;
pub mod room;
pub mod seed;
pub mod service;

pub use config::{ServerConfig, StartupError, PERSIST_DIR_ENV};
pub use hub::{Health, Hub, RoomStats};
pub use persist::{load_room, persist_room, PersistError, SnapshotLoad, Store, WorldLoadError};
pub use room::{
    room_step, Delivery, FanoutPlan, Inbound, RoomSnapshot, RoomState, SessionState, StepOptions,
    StepStats,
};
pub use service::{install_crypto_provider, start, RunningServer};
