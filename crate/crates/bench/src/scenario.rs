//! Multi-bot runs against a live server.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures_util::future::join_all;
use futures_util::{SinkExt, StreamExt};
use openverse_core::protocol::{
    create_body, decode_str, encode, update_body, ErrorCode, Kind, ProtocolError, WireMessage,
    PROTOCOL_VERSION,
};
use openverse_core::{ComponentState, EntityRecord, Owner, Transform, HELLO_WORLD_ID};
use serde::Serialize;
use tokio::net::TcpStream;
use tokio::sync::{mpsc, Barrier};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use tracing::{debug, warn};

use crate::profile::{plan_bot, spawn_point, BotProfile, PlannedSend};
use crate::report::{summarize, LatencySample, RunReport};
use crate::BenchError;

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const PING_EVERY: Duration = Duration::from_secs(5);

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    /// WebSocket sync endpoint, e.g. `ws://127.0.0.1:8080/sync`.
    pub url: String,
    pub room: String,
    pub bots: usize,
    pub profile: BotProfile,
    /// Streaming time; replaces `profile.lifetime_s`.
    pub duration_s: f64,
    pub seed: u64,
    /// Fixed delay added to every outgoing frame.
    pub inject_delay_ms: u64,
    pub connect_timeout: Duration,
    /// Quiet time after streaming so in-flight updates land.
    pub settle: Duration,
}

impl ScenarioConfig {
    pub fn new(url: impl Into<String>, bots: usize, duration_s: f64) -> Self {
        ScenarioConfig {
            url: url.into(),
            room: HELLO_WORLD_ID.to_owned(),
            bots,
            profile: BotProfile::default(),
            duration_s,
            seed: 1,
            inject_delay_ms: 0,
            connect_timeout: Duration::from_secs(10),
            settle: Duration::from_millis(750),
        }
    }

    fn effective_profile(&self) -> BotProfile {
        BotProfile {
            lifetime_s: self.duration_s,
            ..self.profile
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.bots < 2 {
            return Err(BenchError::Config("a scenario needs at least 2 bots".into()));
        }
        self.effective_profile().validate()
    }
}

/// Entity id of bot `idx`'s avatar.
pub fn avatar_id(idx: usize) -> String {
    format!("bot-{idx}")
}

struct Joined {
    idx: usize,
    ws: Ws,
}

enum JoinFailure {
    Capacity,
    Failed(String),
}

/// Send times keyed by (entity, seq), on the run's shared clock.
#[derive(Default)]
struct SendTable(Mutex<HashMap<(String, u64), f64>>);

impl SendTable {
    fn record(&self, entity: &str, seq: u64, at_ms: f64) {
        self.0.lock().unwrap().insert((entity.to_owned(), seq), at_ms);
    }

    fn lookup(&self, entity: &str, seq: u64) -> Option<f64> {
        self.0.lock().unwrap().get(&(entity.to_owned(), seq)).copied()
    }
}

struct RunCtx {
    clock: Instant,
    table: SendTable,
    end: Barrier,
    delay: Duration,
    settle: Duration,
    duration: Duration,
    room: String,
}

impl RunCtx {
    fn now_ms(&self) -> f64 {
        self.clock.elapsed().as_secs_f64() * 1000.0
    }
}

#[derive(Default)]
struct BotResult {
    sent: Vec<PlannedSend>,
    received: u64,
    samples: Vec<LatencySample>,
    observed: Vec<(String, u64)>,
    errors: Vec<String>,
}

async fn join_bot(cfg: &ScenarioConfig, idx: usize) -> Result<Joined, JoinFailure> {
    let attempt = async {
        let (mut ws, _) = tokio_tungstenite::connect_async_with_config(cfg.url.as_str(), None, true)
            .await
            .map_err(|e| JoinFailure::Failed(format!("bot {idx}: connect: {e}")))?;
        let hello = WireMessage::new(Kind::Hello, cfg.room.clone()).with_field("version", PROTOCOL_VERSION);
        ws.send(Message::text(encode(&hello)))
            .await
            .map_err(|e| JoinFailure::Failed(format!("bot {idx}: send hello: {e}")))?;
        let mut welcomed = false;
        while let Some(frame) = ws.next().await {
            let Ok(Message::Text(text)) = frame else {
                continue;
            };
            let msg = decode_str(&text).map_err(|e| JoinFailure::Failed(format!("bot {idx}: {e}")))?;
            if let Some(err) = ProtocolError::from_message(&msg) {
                return Err(match err.code {
                    ErrorCode::RoomFull => JoinFailure::Capacity,
                    _ => JoinFailure::Failed(format!("bot {idx}: refused: {err}")),
                });
            }
            match msg.kind {
                Kind::Welcome => welcomed = true,
                Kind::Snapshot if welcomed => return Ok(Joined { idx, ws }),
                _ => {}
            }
        }
        Err(JoinFailure::Failed(format!("bot {idx}: closed during admission")))
    };
    tokio::time::timeout(cfg.connect_timeout, attempt)
        .await
        .unwrap_or_else(|_| Err(JoinFailure::Failed(format!("bot {idx}: admission timed out"))))
}

fn avatar_create(room: &str, seed: u64, idx: usize) -> WireMessage {
    let (x, z) = spawn_point(seed, idx);
    let record = EntityRecord::new(
        avatar_id(idx),
        Owner::Server,
        1,
        [
            ComponentState::transform(&Transform::at(x, 1.6, z)),
            ComponentState::new("avatar", Default::default()),
        ],
    )
    .expect("avatar components are valid");
    WireMessage::new(Kind::EntityCreate, room)
        .for_entity(avatar_id(idx), 1)
        .with_body(create_body(&record))
}

fn update_frame(room: &str, p: &PlannedSend, ts_ms: u64) -> WireMessage {
    let t = Transform::at(p.px, 1.6, p.pz).with_rotation(0.0, p.ry, 0.0);
    WireMessage::new(Kind::EntityUpdate, room)
        .for_entity(avatar_id(p.bot), p.seq)
        .with_body(update_body(&ComponentState::transform(&t)))
        .at(ts_ms)
}

async fn drive(bot: Joined, plan: Vec<PlannedSend>, ctx: Arc<RunCtx>, start: tokio::time::Instant) -> BotResult {
    let (mut sink, mut stream) = bot.ws.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<(tokio::time::Instant, Message)>();

    let writer = tokio::spawn(async move {
        while let Some((due, frame)) = rx.recv().await {
            tokio::time::sleep_until(due).await;
            if let Err(e) = sink.send(frame).await {
                return Err(e.to_string());
            }
        }
        let _ = sink.close().await;
        Ok(())
    });

    let leaving = Arc::new(AtomicBool::new(false));
    let reader_leaving = leaving.clone();
    let reader_ctx = ctx.clone();
    let reader = tokio::spawn(async move {
        let ctx = reader_ctx;
        let mut out = BotResult::default();
        while let Some(frame) = stream.next().await {
            let text = match frame {
                Ok(Message::Text(text)) => text,
                Ok(Message::Close(_)) => break,
                Ok(_) => continue,
                // A reset after Bye is just the server hanging up.
                Err(_) if reader_leaving.load(Ordering::SeqCst) => break,
                Err(e) => {
                    out.errors.push(format!("read: {e}"));
                    break;
                }
            };
            let now = ctx.now_ms();
            let Ok(msg) = decode_str(&text) else {
                out.errors.push("undecodable frame from server".into());
                continue;
            };
            match msg.kind {
                Kind::EntityUpdate => {
                    let (Some(entity), Some(seq)) = (msg.entity.clone(), msg.seq) else {
                        continue;
                    };
                    out.received += 1;
                    if let Some(sent_at) = ctx.table.lookup(&entity, seq) {
                        out.samples.push(LatencySample::new(entity.clone(), sent_at, now));
                    }
                    out.observed.push((entity, seq));
                }
                Kind::Error => {
                    if let Some(err) = ProtocolError::from_message(&msg) {
                        out.errors.push(format!("server error: {err}"));
                    }
                }
                _ => {}
            }
        }
        out
    });

    let mut result = BotResult::default();
    let send = |msg: &WireMessage| {
        let due = tokio::time::Instant::now() + ctx.delay;
        tx.send((due, Message::text(encode(msg)))).is_ok()
    };

    let mut next_ping = start + PING_EVERY;
    for p in plan {
        let due = start + Duration::from_millis(p.at_ms);
        while next_ping < due {
            tokio::time::sleep_until(next_ping).await;
            send(&WireMessage::new(Kind::Ping, ctx.room.clone()));
            next_ping += PING_EVERY;
        }
        tokio::time::sleep_until(due).await;
        let now = ctx.now_ms();
        ctx.table.record(&avatar_id(p.bot), p.seq, now);
        if !send(&update_frame(&ctx.room, &p, now as u64)) {
            result.errors.push("writer stopped".into());
            break;
        }
        result.sent.push(p);
    }
    let end = start + ctx.duration;
    while next_ping < end {
        tokio::time::sleep_until(next_ping).await;
        send(&WireMessage::new(Kind::Ping, ctx.room.clone()));
        next_ping += PING_EVERY;
    }
    tokio::time::sleep_until(end).await;

    ctx.end.wait().await;
    tokio::time::sleep(ctx.settle + ctx.delay).await;
    leaving.store(true, Ordering::SeqCst);
    send(&WireMessage::new(Kind::Bye, ctx.room.clone()));
    drop(tx);

    match writer.await {
        Ok(Ok(())) => {}
        Ok(Err(e)) => result.errors.push(format!("write: {e}")),
        Err(e) => result.errors.push(format!("writer task: {e}")),
    }
    match tokio::time::timeout(Duration::from_secs(5), reader).await {
        Ok(Ok(r)) => {
            result.received = r.received;
            result.samples = r.samples;
            result.observed = r.observed;
            result.errors.extend(r.errors);
        }
        Ok(Err(e)) => result.errors.push(format!("reader task: {e}")),
        Err(_) => result.errors.push(format!("bot {}: server did not close after Bye", bot.idx)),
    }
    result
}

#[derive(Debug, Default, Serialize)]
struct HealthPoint {
    ticks: u64,
    busy_us: u64,
    tick_ms: u64,
    sessions: u64,
}

/// `http(s)://host/healthz` for a `ws(s)://host/...` endpoint.
pub fn health_url(sync_url: &str) -> Option<String> {
    let mut url = url::Url::parse(sync_url).ok()?;
    let scheme = match url.scheme() {
        "ws" => "http",
        "wss" => "https",
        _ => return None,
    };
    url.set_scheme(scheme).ok()?;
    url.set_path("/healthz");
    url.set_query(None);
    Some(url.to_string())
}

async fn room_health(cfg: &ScenarioConfig) -> Option<HealthPoint> {
    let url = health_url(&cfg.url)?;
    let client = reqwest::Client::builder()
        .danger_accept_invalid_certs(true)
        .timeout(Duration::from_secs(3))
        .build()
        .ok()?;
    let body: serde_json::Value = serde_json::from_slice(&client.get(url).send().await.ok()?.bytes().await.ok()?).ok()?;
    let room = &body["room_stats"][&cfg.room];
    if room.is_null() {
        return Some(HealthPoint::default());
    }
    Some(HealthPoint {
        ticks: room["ticks"].as_u64()?,
        busy_us: room["busy_us"].as_u64()?,
        tick_ms: room["tick_ms"].as_u64()?,
        sessions: room["sessions"].as_u64()?,
    })
}

/// Spawns the bots, streams for `duration_s`, and reports what they saw.
pub async fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    crate::install_crypto_provider();
    let profile = cfg.effective_profile();
    let before = room_health(cfg).await;

    let attempts = join_all((0..cfg.bots).map(|i| join_bot(cfg, i))).await;
    let mut joined = Vec::new();
    let mut capacity_rejections = 0;
    let mut errors = Vec::new();
    for a in attempts {
        match a {
            Ok(j) => joined.push(j),
            Err(JoinFailure::Capacity) => capacity_rejections += 1,
            Err(JoinFailure::Failed(e)) => errors.push(e),
        }
    }
    let admitted = joined.len();
    debug!(admitted, capacity_rejections, "bots joined");

    // Everyone announces an avatar before anyone streams.
    for j in &mut joined {
        let create = avatar_create(&cfg.room, cfg.seed, j.idx);
        if let Err(e) = j.ws.send(Message::text(encode(&create))).await {
            errors.push(format!("bot {}: create avatar: {e}", j.idx));
        }
    }
    tokio::time::sleep(Duration::from_millis(250)).await;

    let ctx = Arc::new(RunCtx {
        clock: Instant::now(),
        table: SendTable::default(),
        end: Barrier::new(admitted.max(1)),
        delay: Duration::from_millis(cfg.inject_delay_ms),
        settle: cfg.settle,
        duration: Duration::from_secs_f64(cfg.duration_s),
        room: cfg.room.clone(),
    });
    let start = tokio::time::Instant::now();
    let tasks: Vec<_> = joined
        .into_iter()
        .map(|j| {
            let plan = plan_bot(cfg.seed, j.idx, &profile);
            let idx = j.idx;
            (idx, tokio::spawn(drive(j, plan, ctx.clone(), start)))
        })
        .collect();

    let mut sent_log = Vec::new();
    let mut received_by_bot = vec![0; cfg.bots];
    let mut samples = Vec::new();
    let mut observed: HashSet<(String, u64)> = HashSet::new();
    for (idx, task) in tasks {
        match task.await {
            Ok(r) => {
                sent_log.extend(r.sent);
                received_by_bot[idx] = r.received;
                samples.extend(r.samples);
                observed.extend(r.observed);
                errors.extend(r.errors);
            }
            Err(e) => errors.push(format!("bot {idx} task failed: {e}")),
        }
    }
    sent_log.sort_by_key(|p| (p.bot, p.seq));

    let after = room_health(cfg).await;
    let tick_utilization = match (before, after) {
        (Some(b), Some(a)) if a.ticks > b.ticks && a.tick_ms > 0 => {
            let budget_us = (a.ticks - b.ticks) * a.tick_ms * 1000;
            Some(a.busy_us.saturating_sub(b.busy_us) as f64 / budget_us as f64)
        }
        _ => None,
    };

    let sent = sent_log.len() as u64;
    let dropped = if admitted >= 2 {
        sent_log
            .iter()
            .filter(|p| !observed.contains(&(avatar_id(p.bot), p.seq)))
            .count() as u64
    } else {
        0
    };
    let received: u64 = received_by_bot.iter().sum();
    for e in &errors {
        warn!("{e}");
    }
    let report = RunReport {
        bot_count: cfg.bots,
        admitted,
        capacity_rejections,
        duration_s: cfg.duration_s,
        sent,
        received,
        dropped,
        latency_ms: summarize(&samples),
        samples: samples.len(),
        throughput_per_s: if cfg.duration_s > 0.0 {
            received as f64 / cfg.duration_s
        } else {
            0.0
        },
        tick_utilization,
        valid: errors.is_empty(),
        errors,
        seed: cfg.seed,
        profile,
        inject_delay_ms: cfg.inject_delay_ms,
        sent_log,
        received_by_bot,
    };
    Ok(report)
}

/// Waits until the room reports no sessions, so the next run starts clean.
async fn wait_for_empty_room(cfg: &ScenarioConfig) {
    for _ in 0..50 {
        match room_health(cfg).await {
            Some(h) if h.sessions == 0 => return,
            None => return,
            _ => tokio::time::sleep(Duration::from_millis(100)).await,
        }
    }
}

/// One run per count, in order, recycling the room in between.
pub async fn density_sweep(cfg: &ScenarioConfig, counts: &[usize]) -> Result<Vec<RunReport>, BenchError> {
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(BenchError::Config("bot counts must be ascending".into()));
    }
    let mut reports = Vec::with_capacity(counts.len());
    for &bots in counts {
        wait_for_empty_room(cfg).await;
        let run = ScenarioConfig { bots, ..cfg.clone() };
        reports.push(run_scenario(&run).await?);
    }
    Ok(reports)
}

#[derive(Serialize)]
struct SweepFile<'a> {
    profile: BotProfile,
    counts: Vec<usize>,
    reports: &'a [RunReport],
}

pub fn sweep_json(reports: &[RunReport]) -> String {
    let file = SweepFile {
        profile: reports.first().map(|r| r.profile).unwrap_or_default(),
        counts: reports.iter().map(|r| r.bot_count).collect(),
        reports,
    };
    serde_json::to_string_pretty(&file).expect("sweep serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn health_url_follows_sync_url() {
        assert_eq!(
            health_url("ws://127.0.0.1:9000/sync").as_deref(),
            Some("http://127.0.0.1:9000/healthz")
        );
        assert_eq!(
            health_url("wss://example.org/sync?x=1").as_deref(),
            Some("https://example.org/healthz")
        );
        assert_eq!(health_url("http://example.org/"), None);
    }

    #[tokio::test]
    async fn fewer_than_two_bots_is_a_config_error() {
        let cfg = ScenarioConfig::new("ws://127.0.0.1:1/sync", 1, 1.0);
        assert!(matches!(run_scenario(&cfg).await, Err(BenchError::Config(_))));
    }

    #[tokio::test]
    async fn unsorted_counts_are_refused() {
        let cfg = ScenarioConfig::new("ws://127.0.0.1:1/sync", 2, 1.0);
        assert!(density_sweep(&cfg, &[10, 5]).await.is_err());
        assert!(density_sweep(&cfg, &[]).await.unwrap().is_empty());
    }
}
