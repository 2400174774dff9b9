use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub const PERSIST_DIR_ENV: &str = "OPENVERSE_PERSIST_DIR";

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub cert: Option<PathBuf>,
    pub key: Option<PathBuf>,
    pub dev_plaintext: bool,
    pub persist_dir: PathBuf,
    pub tick_ms: u32,
    pub max_room_size: u32,
    pub heartbeat_timeout_ms: u32,
    /// Minimum spacing between two snapshot writes of one room.
    pub persist_debounce_ms: u64,
    /// Outbound frames buffered per session before it is disconnected.
    pub outbound_queue: usize,
    pub hello_timeout_ms: u64,
    pub coalesce: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            port: 8443,
            cert: None,
            key: None,
            dev_plaintext: false,
            persist_dir: PathBuf::from("data"),
            tick_ms: 50,
            max_room_size: 20,
            heartbeat_timeout_ms: 30_000,
            persist_debounce_ms: 5_000,
            outbound_queue: 256,
            hello_timeout_ms: 10_000,
            coalesce: true,
        }
    }
}

impl ServerConfig {
    /// Loopback plaintext config for local runs and tests.
    pub fn dev(persist_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            dev_plaintext: true,
            persist_dir: persist_dir.into(),
            ..ServerConfig::default()
        }
    }

    /// Replaces the persist dir with `OPENVERSE_PERSIST_DIR` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(PERSIST_DIR_ENV).filter(|d| !d.is_empty()) {
            self.persist_dir = PathBuf::from(dir);
        }
        self
    }

    pub fn tick(&self) -> Duration {
        Duration::from_millis(u64::from(self.tick_ms))
    }

    pub fn validate(&self) -> Result<(), StartupError> {
        if self.tick_ms == 0 {
            return Err(StartupError::Config("tick-ms must be positive".into()));
        }
        if self.max_room_size == 0 {
            return Err(StartupError::Config("max-room-size must be positive".into()));
        }
        if self.heartbeat_timeout_ms == 0 {
            return Err(StartupError::Config("heartbeat-timeout-ms must be positive".into()));
        }
        if self.outbound_queue < 2 {
            return Err(StartupError::Config("outbound queue must hold at least two frames".into()));
        }
        if !self.dev_plaintext && (self.cert.is_none() || self.key.is_none()) {
            return Err(StartupError::Tls(
                "production mode needs --cert and --key (or --dev-plaintext)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("port {port} is already in use")]
    PortBusy { port: u16 },
    #[error("TLS misconfiguration: {0}")]
    Tls(String),
    #[error("persist dir unusable: {0}")]
    PersistDir(String),
}

impl StartupError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StartupError::Config(_) => 2,
            StartupError::PortBusy { .. } => 3,
            StartupError::Tls(_) => 4,
            StartupError::PersistDir(_) => 5,
        }
    }
}
