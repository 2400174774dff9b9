//! Room registry and the per-room executor task.
//!
//! Each room is owned by exactly one task. Connections talk to it through a
//! command channel; it answers through bounded per-session outbound queues.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::Utf8Bytes;
use openverse_core::protocol::{encode, AdmissionPolicy, ProtocolError, SessionIdAllocator, WireMessage};
use openverse_core::{SessionId, ValidationOptions, WorldDescription};
use serde::Serialize;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;
use tracing::{info, warn};

use crate::config::ServerConfig;
use crate::persist::{load_room, Store, WorldLoadError};
use crate::room::{FanoutPlan, Inbound, RoomState, StepOptions};

const COMMAND_QUEUE: usize = 4096;

pub type Frame = Utf8Bytes;

pub(crate) enum Command {
    Join {
        hello: WireMessage,
        outbound: mpsc::Sender<Frame>,
        reply: oneshot::Sender<Result<SessionId, ProtocolError>>,
    },
    Inbound(Inbound),
    Malformed {
        session: SessionId,
        error: ProtocolError,
    },
    Disconnected(SessionId),
}

/// Counters published by a room task after every tick.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RoomStats {
    pub sessions: usize,
    pub entities: usize,
    pub ticks: u64,
    /// Time spent inside ticks, summed.
    pub busy_us: u64,
    pub tick_ms: u32,
    /// Busy share of the last tick interval.
    pub tick_utilization: f64,
    pub max_tick_utilization: f64,
    pub applied: u64,
    pub stale: u64,
    pub rejected: u64,
    pub coalesced: u64,
    pub evictions: u64,
    pub overflow_disconnects: u64,
    pub persist_writes: u64,
    pub persist_failures: u64,
}

#[derive(Clone)]
pub(crate) struct RoomHandle {
    pub tx: mpsc::Sender<Command>,
    pub world: Arc<WorldDescription>,
    stats: Arc<Mutex<RoomStats>>,
}

pub struct Hub {
    store: Store,
    config: Arc<ServerConfig>,
    policy: AdmissionPolicy,
    ids: Arc<SessionIdAllocator>,
    clock: Instant,
    rooms: Mutex<HashMap<String, RoomHandle>>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
    shutdown: watch::Sender<bool>,
}

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub rooms: usize,
    pub sessions: usize,
    pub room_stats: BTreeMap<String, RoomStats>,
}

impl Hub {
    pub fn new(store: Store, config: ServerConfig) -> Arc<Hub> {
        let policy = AdmissionPolicy {
            max_room_size: config.max_room_size as usize,
            ..AdmissionPolicy::default()
        };
        Arc::new(Hub {
            store,
            config: Arc::new(config),
            policy,
            ids: Arc::new(SessionIdAllocator::new()),
            clock: Instant::now(),
            rooms: Mutex::new(HashMap::new()),
            tasks: Mutex::new(Vec::new()),
            shutdown: watch::channel(false).0,
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn policy(&self) -> &AdmissionPolicy {
        &self.policy
    }

    pub fn ids(&self) -> &SessionIdAllocator {
        &self.ids
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.elapsed().as_millis() as u64
    }

    fn validation(&self) -> ValidationOptions {
        ValidationOptions {
            allow_http_portals: self.config.dev_plaintext,
        }
    }

    /// The world behind `world_id`, from a live room or from disk.
    pub fn world(&self, world_id: &str) -> Result<Arc<WorldDescription>, WorldLoadError> {
        if let Some(room) = self.rooms.lock().unwrap().get(world_id) {
            return Ok(room.world.clone());
        }
        self.store.load_world(world_id, &self.validation()).map(Arc::new)
    }

    /// The running room for `world_id`, started on first use.
    pub(crate) fn room(&self, world_id: &str) -> Result<RoomHandle, WorldLoadError> {
        let mut rooms = self.rooms.lock().unwrap();
        if let Some(room) = rooms.get(world_id) {
            return Ok(room.clone());
        }
        if *self.shutdown.borrow() {
            return Err(WorldLoadError::NotFound(world_id.to_owned()));
        }
        let world = Arc::new(self.store.load_world(world_id, &self.validation())?);
        let state = load_room(world.clone(), &self.store);
        let (tx, rx) = mpsc::channel(COMMAND_QUEUE);
        let stats = Arc::new(Mutex::new(RoomStats {
            entities: state.entities.len(),
            tick_ms: self.config.tick_ms,
            ..RoomStats::default()
        }));
        let executor = RoomExecutor {
            room: state,
            outbound: BTreeMap::new(),
            store: self.store.clone(),
            config: self.config.clone(),
            policy: self.policy.clone(),
            ids: self.ids.clone(),
            clock: self.clock,
            stats: stats.clone(),
        };
        let task = tokio::spawn(executor.run(rx, self.shutdown.subscribe()));
        self.tasks.lock().unwrap().push(task);
        info!(room = world_id, "room opened");
        let handle = RoomHandle { tx, world, stats };
        rooms.insert(world_id.to_owned(), handle.clone());
        Ok(handle)
    }

    pub fn health(&self) -> Health {
        let rooms = self.rooms.lock().unwrap();
        let room_stats: BTreeMap<String, RoomStats> = rooms
            .iter()
            .map(|(id, r)| (id.clone(), r.stats.lock().unwrap().clone()))
            .collect();
        Health {
            status: "ok",
            rooms: room_stats.len(),
            sessions: room_stats.values().map(|s| s.sessions).sum(),
            room_stats,
        }
    }

    /// Stops every room task after a final snapshot write.
    pub async fn shutdown(&self) {
        let _ = self.shutdown.send(true);
        let tasks: Vec<_> = self.tasks.lock().unwrap().drain(..).collect();
        for task in tasks {
            let _ = task.await;
        }
        self.rooms.lock().unwrap().clear();
    }
}

struct RoomExecutor {
    room: RoomState,
    outbound: BTreeMap<SessionId, mpsc::Sender<Frame>>,
    store: Store,
    config: Arc<ServerConfig>,
    policy: AdmissionPolicy,
    ids: Arc<SessionIdAllocator>,
    clock: Instant,
    stats: Arc<Mutex<RoomStats>>,
}

type PersistTask = JoinHandle<(u64, bool)>;

impl RoomExecutor {
    fn now_ms(&self) -> u64 {
        self.clock.elapsed().as_millis() as u64
    }

    async fn run(mut self, mut rx: mpsc::Receiver<Command>, mut shutdown: watch::Receiver<bool>) {
        let tick = self.config.tick();
        let debounce = Duration::from_millis(self.config.persist_debounce_ms);
        let opts = StepOptions {
            coalesce: self.config.coalesce,
        };
        let mut interval = tokio::time::interval(tick);
        interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let mut batch: Vec<Inbound> = Vec::new();
        let mut departed: Vec<SessionId> = Vec::new();
        let mut last_persist: Option<Instant> = None;
        let mut inflight: Option<PersistTask> = None;

        loop {
            tokio::select! {
                biased;
                _ = shutdown.changed() => break,
                _ = interval.tick() => {
                    let started = Instant::now();
                    self.tick(std::mem::take(&mut batch), &mut departed, &opts);
                    if let Some(task) = inflight.take_if(|t| t.is_finished()) {
                        self.finish_persist(task).await;
                    }
                    let due = last_persist.is_none_or(|t| t.elapsed() >= debounce);
                    if self.room.dirty && inflight.is_none() && due {
                        inflight = Some(self.start_persist());
                        last_persist = Some(Instant::now());
                    }
                    self.publish(started.elapsed(), tick);
                }
                cmd = rx.recv() => match cmd {
                    None => break,
                    Some(Command::Join { hello, outbound, reply }) => self.join(hello, outbound, reply),
                    Some(Command::Inbound(inbound)) => batch.push(inbound),
                    Some(Command::Malformed { session, error }) => {
                        let msg = error.to_message(&self.room.room_id);
                        self.dispatch(FanoutPlan {
                            deliveries: vec![crate::room::Delivery { msg, to: vec![session] }],
                        });
                    }
                    Some(Command::Disconnected(session)) => departed.push(session),
                }
            }
        }

        if let Some(task) = inflight.take() {
            self.finish_persist(task).await;
        }
        if self.room.dirty {
            let task = self.start_persist();
            self.finish_persist(task).await;
        }
        info!(room = %self.room.room_id, "room closed");
    }

    fn join(
        &mut self,
        hello: WireMessage,
        outbound: mpsc::Sender<Frame>,
        reply: oneshot::Sender<Result<SessionId, ProtocolError>>,
    ) {
        let now = self.now_ms();
        match self.room.admit(&hello, &self.policy, &self.ids, now) {
            Ok((admission, plan)) => {
                let welcome = outbound.try_send(encode(&admission.welcome).into());
                let snapshot = outbound.try_send(encode(&admission.snapshot).into());
                let session = admission.session;
                if welcome.is_err() || snapshot.is_err() {
                    let mut leave = FanoutPlan::default();
                    self.room.remove_session(&session, &mut leave);
                    let _ = reply.send(Err(ProtocolError::new(
                        openverse_core::protocol::ErrorCode::RoomFull,
                        "outbound queue unavailable",
                    )));
                    return;
                }
                info!(room = %self.room.room_id, session = %session, population = self.room.sessions.len(), "session admitted");
                self.outbound.insert(session.clone(), outbound);
                let _ = reply.send(Ok(session));
                self.dispatch(plan);
            }
            Err(err) => {
                info!(room = %self.room.room_id, code = err.code.as_str(), "join refused");
                let _ = reply.send(Err(err));
            }
        }
    }

    fn tick(&mut self, batch: Vec<Inbound>, departed: &mut Vec<SessionId>, opts: &StepOptions) {
        let (mut plan, step) = self.room.step(batch, opts);
        for session in departed.drain(..) {
            if self.room.remove_session(&session, &mut plan) {
                info!(room = %self.room.room_id, session = %session, "session disconnected");
            }
        }
        let timeout = u64::from(self.config.heartbeat_timeout_ms);
        let (evicted, sweep) = self.room.heartbeat_sweep(self.now_ms(), timeout);
        for session in &evicted {
            info!(room = %self.room.room_id, session = %session, "session evicted after heartbeat timeout");
        }
        plan.extend(sweep);
        self.dispatch(plan);

        let live = &self.room.sessions;
        self.outbound.retain(|s, _| live.contains_key(s));
        for (id, tx) in &self.outbound {
            if let Some(s) = self.room.sessions.get_mut(id) {
                s.queue_depth = tx.max_capacity() - tx.capacity();
            }
        }

        let mut stats = self.stats.lock().unwrap();
        stats.applied += step.applied;
        stats.stale += step.stale;
        stats.rejected += step.rejected;
        stats.coalesced += step.coalesced;
        stats.evictions += evicted.len() as u64;
    }

    /// Sends every delivery; sessions whose queue is full or gone are
    /// removed and their departure is fanned out in turn.
    fn dispatch(&mut self, mut plan: FanoutPlan) {
        loop {
            let mut overflow: Vec<SessionId> = Vec::new();
            for d in &plan.deliveries {
                let frame: Frame = encode(&d.msg).into();
                for s in &d.to {
                    if let Some(tx) = self.outbound.get(s) {
                        if tx.try_send(frame.clone()).is_err() && !overflow.contains(s) {
                            overflow.push(s.clone());
                        }
                    }
                }
            }
            if overflow.is_empty() {
                return;
            }
            let mut next = FanoutPlan::default();
            for s in overflow {
                self.outbound.remove(&s);
                if self.room.remove_session(&s, &mut next) {
                    warn!(room = %self.room.room_id, session = %s, "outbound queue overflow, session disconnected");
                    self.stats.lock().unwrap().overflow_disconnects += 1;
                }
            }
            plan = next;
        }
    }

    fn start_persist(&self) -> PersistTask {
        let revision = self.room.revision();
        let snapshot = self.room.snapshot();
        let store = self.store.clone();
        tokio::task::spawn_blocking(move || match store.write_snapshot(&snapshot) {
            Ok(path) => {
                info!(room = %snapshot.room_id, entities = snapshot.entities.len(), path = %path.display(), "persisted room");
                (revision, true)
            }
            Err(e) => {
                warn!(room = %snapshot.room_id, error = %e, "persist failed, room stays dirty");
                (revision, false)
            }
        })
    }

    async fn finish_persist(&mut self, task: PersistTask) {
        let (revision, ok) = task.await.unwrap_or((0, false));
        let mut stats = self.stats.lock().unwrap();
        if ok {
            self.room.mark_persisted(revision);
            stats.persist_writes += 1;
        } else {
            stats.persist_failures += 1;
        }
    }

    fn publish(&self, busy: Duration, tick: Duration) {
        let mut stats = self.stats.lock().unwrap();
        let utilization = busy.as_secs_f64() / tick.as_secs_f64();
        stats.sessions = self.room.sessions.len();
        stats.entities = self.room.entities.len();
        stats.ticks += 1;
        stats.busy_us += busy.as_micros() as u64;
        stats.tick_utilization = utilization;
        stats.max_tick_utilization = stats.max_tick_utilization.max(utilization);
    }
}
