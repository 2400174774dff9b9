//! Load harness: scripted bots that join a room over the sync endpoint and
//! measure fan-out latency, plus a first-load payload probe.

pub mod payload;
pub mod profile;
pub mod report;
pub mod scenario;

pub use payload::{payload_budget, AssetBytes, PayloadReport, PAYLOAD_BUDGET_BYTES};
pub use profile::{plan_bot, spawn_point, BotProfile, Movement, PlannedSend};
pub use report::{percentile, summarize, sweep_table, LatencySample, LatencySummary, RunReport};
pub use scenario::{avatar_id, density_sweep, health_url, run_scenario, sweep_json, ScenarioConfig};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("http: {0}")]
    Http(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Selects the ring provider for client TLS; safe to call repeatedly.
pub fn install_crypto_provider() {
    let _ = rustls::crypto::ring::default_provider().install_default();
}
