//! Authoritative room state and the deterministic per-tick reducer.
//!
//! Everything here is synchronous and side-effect free: the executor feeds
//! batches in, gets a fanout plan back, and performs the I/O itself.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use openverse_core::protocol::{
    create_body, entity_from_create, grant_body, resolve_ownership, update_from_body, Admission,
    AdmissionPolicy, ErrorCode, Kind, OwnershipRecord, ProtocolError, RoomView,
    SessionIdAllocator, WireMessage,
};
use openverse_core::{
    EntityRecord, Owner, SessionId, UpdateOutcome, WorldDescription, SERVER_OWNER, TRANSFORM,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionState {
    pub session_id: SessionId,
    pub room_id: String,
    /// Monotonic clock reading of the last frame received.
    pub last_heartbeat_ms: u64,
    pub avatar_entity: Option<String>,
    pub queue_depth: usize,
}

/// One message admitted to a room, tagged with its session and arrival time.
#[derive(Clone, Debug, PartialEq)]
pub struct Inbound {
    pub from: SessionId,
    pub msg: WireMessage,
    pub at_ms: u64,
}

impl Inbound {
    pub fn new(from: SessionId, msg: WireMessage, at_ms: u64) -> Self {
        Inbound { from, msg, at_ms }
    }
}

/// One outgoing frame and the sessions that should receive it.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub msg: WireMessage,
    pub to: Vec<SessionId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FanoutPlan {
    pub deliveries: Vec<Delivery>,
}

impl FanoutPlan {
    pub fn is_empty(&self) -> bool {
        self.deliveries.is_empty()
    }

    pub fn extend(&mut self, other: FanoutPlan) {
        self.deliveries.extend(other.deliveries);
    }

    /// Frames addressed to `session`, in delivery order.
    pub fn frames_for<'a>(&'a self, session: &'a SessionId) -> impl Iterator<Item = &'a WireMessage> {
        self.deliveries
            .iter()
            .filter(move |d| d.to.contains(session))
            .map(|d| &d.msg)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub applied: u64,
    pub stale: u64,
    pub rejected: u64,
    /// Transform updates superseded by a later one in the same tick.
    pub coalesced: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOptions {
    /// Forward at most one transform update per entity per tick.
    pub coalesce: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { coalesce: true }
    }
}

/// Persistent entities of a room, as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSnapshot {
    pub room_id: String,
    pub world_id: String,
    pub entities: Vec<EntityRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoomState {
    pub room_id: String,
    pub world: Arc<WorldDescription>,
    pub entities: BTreeMap<String, EntityRecord>,
    pub sessions: BTreeMap<SessionId, SessionState>,
    pub ownership: BTreeMap<String, OwnershipRecord>,
    pub dirty: bool,
    revision: u64,
}

impl RoomState {
    /// World static entities overlaid with the snapshot's persistent
    /// entities; the snapshot wins on id collisions.
    pub fn from_world(world: Arc<WorldDescription>, snapshot: Option<RoomSnapshot>) -> RoomState {
        let mut entities = BTreeMap::new();
        for template in &world.static_entities {
            // Validated worlds always yield a record.
            if let Ok(record) = template.to_record() {
                entities.insert(record.entity_id.clone(), record);
            }
        }
        if let Some(snapshot) = snapshot {
            for mut record in snapshot.entities {
                if let Owner::Session(_) = record.owner {
                    record.owner = Owner::Server;
                }
                entities.insert(record.entity_id.clone(), record);
            }
        }
        let ownership = entities
            .values()
            .map(|e| (e.entity_id.clone(), OwnershipRecord::of(e)))
            .collect();
        RoomState {
            room_id: world.world_id.clone(),
            world,
            entities,
            sessions: BTreeMap::new(),
            ownership,
            dirty: false,
            revision: 0,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    fn touch(&mut self) {
        self.dirty = true;
        self.revision += 1;
    }

    pub fn view(&self) -> RoomView<'_> {
        RoomView {
            population: self.sessions.len(),
            entities: self.entities.values().collect(),
        }
    }

    /// Runs admission against the current room and, on success, adds the
    /// session. Returns the admission frames and the presence fanout.
    pub fn admit(
        &mut self,
        hello: &WireMessage,
        policy: &AdmissionPolicy,
        ids: &SessionIdAllocator,
        now_ms: u64,
    ) -> Result<(Admission, FanoutPlan), ProtocolError> {
        let admission = openverse_core::protocol::admit(hello, Some(self.view()), policy, ids)?;
        let plan = self.add_session(admission.session.clone(), now_ms);
        Ok((admission, plan))
    }

    pub fn add_session(&mut self, session: SessionId, now_ms: u64) -> FanoutPlan {
        let presence = self
            .server_msg(Kind::Presence)
            .with_field("session", session.as_str())
            .with_field("state", "join");
        let mut plan = FanoutPlan::default();
        self.broadcast(&mut plan, presence, None);
        self.sessions.insert(
            session.clone(),
            SessionState {
                session_id: session,
                room_id: self.room_id.clone(),
                last_heartbeat_ms: now_ms,
                avatar_entity: None,
                queue_depth: 0,
            },
        );
        plan
    }

    /// Applies one batch in order. Equal `(state, batch)` yields equal
    /// `(state', plan)`.
    pub fn step(&mut self, batch: Vec<Inbound>, opts: &StepOptions) -> (FanoutPlan, StepStats) {
        let mut out: Vec<Option<Delivery>> = Vec::new();
        let mut stats = StepStats::default();
        // entity -> index in `out` of its pending transform update
        let mut pending: HashMap<String, usize> = HashMap::new();

        for inbound in batch {
            let Inbound { from, mut msg, at_ms } = inbound;
            let Some(session) = self.sessions.get_mut(&from) else {
                continue;
            };
            session.last_heartbeat_ms = session.last_heartbeat_ms.max(at_ms);
            msg.sender = from.0.clone();

            if msg.room != self.room_id {
                stats.rejected += 1;
                let err = ProtocolError::new(
                    ErrorCode::Forbidden,
                    format!("session belongs to room {}", self.room_id),
                );
                push(&mut out, self.error_to(&from, &msg, err));
                continue;
            }

            let entity_id = msg.entity.clone();
            let ts_ms = msg.ts_ms;
            let result = match msg.kind {
                Kind::Ping => {
                    let pong = self.server_msg(Kind::Pong).at(msg.ts_ms);
                    push(&mut out, Delivery { msg: pong, to: vec![from.clone()] });
                    continue;
                }
                Kind::Bye => {
                    let mut plan = FanoutPlan::default();
                    self.remove_session(&from, &mut plan);
                    for d in plan.deliveries {
                        if let Some(id) = d.msg.entity.as_ref() {
                            pending.remove(id);
                        }
                        push(&mut out, d);
                    }
                    continue;
                }
                Kind::Presence => {
                    let mut plan = FanoutPlan::default();
                    self.broadcast(&mut plan, msg, Some(&from));
                    out.extend(plan.deliveries.into_iter().map(Some));
                    continue;
                }
                Kind::Pong | Kind::Error => continue,
                Kind::EntityCreate => self.apply_create(&from, msg),
                Kind::EntityUpdate => self.apply_update(&from, msg),
                Kind::EntityDelete => self.apply_delete(&from, msg),
                Kind::OwnershipRequest => self.apply_ownership(&from, msg),
                Kind::Hello | Kind::Welcome | Kind::Snapshot | Kind::OwnershipGrant => {
                    Err(ProtocolError::new(
                        ErrorCode::Forbidden,
                        format!("{} is not accepted from clients", msg.kind),
                    ))
                }
            };

            match result {
                Ok(Applied::Stale) => stats.stale += 1,
                Ok(Applied::Fanout(delivery)) => {
                    stats.applied += 1;
                    self.touch();
                    let id = entity_id.unwrap_or_default();
                    let is_transform = delivery.msg.kind == Kind::EntityUpdate
                        && update_from_body(&delivery.msg.body)
                            .map(|c| c.name == TRANSFORM)
                            .unwrap_or(false);
                    if opts.coalesce && is_transform {
                        if let Some(prev) = pending.insert(id.clone(), out.len()) {
                            if out[prev].take().is_some() {
                                stats.coalesced += 1;
                            }
                        }
                    } else {
                        pending.remove(&id);
                    }
                    push(&mut out, delivery);
                }
                Err(err) => {
                    stats.rejected += 1;
                    let offender = self.error_to(&from, &Self::context(entity_id, ts_ms), err);
                    push(&mut out, offender);
                }
            }
        }

        let deliveries = out.into_iter().flatten().filter(|d| !d.to.is_empty()).collect();
        (FanoutPlan { deliveries }, stats)
    }

    fn context(entity: Option<String>, ts_ms: u64) -> WireMessage {
        let mut m = WireMessage::new(Kind::Error, "").at(ts_ms);
        m.entity = entity;
        m
    }

    fn apply_create(&mut self, from: &SessionId, msg: WireMessage) -> Result<Applied, ProtocolError> {
        let id = msg.entity.clone().unwrap_or_default();
        if self.entities.contains_key(&id) {
            return Err(ProtocolError::new(
                ErrorCode::Forbidden,
                format!("entity {id} already exists"),
            ));
        }
        let record = entity_from_create(&msg, Owner::Session(from.clone()))?;
        if record.is_avatar() {
            if let Some(s) = self.sessions.get_mut(from) {
                s.avatar_entity = Some(id.clone());
            }
        }
        self.ownership.insert(id.clone(), OwnershipRecord::of(&record));
        self.entities.insert(id, record);
        Ok(Applied::Fanout(self.to_others(msg, from)))
    }

    fn apply_update(&mut self, from: &SessionId, msg: WireMessage) -> Result<Applied, ProtocolError> {
        let id = msg.entity.as_deref().unwrap_or_default();
        let seq = msg.seq.unwrap_or(0);
        let entity = self
            .entities
            .get_mut(id)
            .ok_or_else(|| ProtocolError::new(ErrorCode::NoSuchEntity, format!("no entity {id}")))?;
        if seq <= entity.seq {
            return Ok(Applied::Stale);
        }
        if !entity.owner.is(from) {
            return Err(not_owner(id));
        }
        let update = update_from_body(&msg.body)?;
        match entity
            .apply_update(update, seq)
            .map_err(openverse_core::protocol::BodyError::from)?
        {
            UpdateOutcome::Stale => Ok(Applied::Stale),
            UpdateOutcome::Applied => Ok(Applied::Fanout(self.to_others(msg, from))),
        }
    }

    fn apply_delete(&mut self, from: &SessionId, msg: WireMessage) -> Result<Applied, ProtocolError> {
        let id = msg.entity.clone().unwrap_or_default();
        let seq = msg.seq.unwrap_or(0);
        let entity = self
            .entities
            .get(&id)
            .ok_or_else(|| ProtocolError::new(ErrorCode::NoSuchEntity, format!("no entity {id}")))?;
        if seq <= entity.seq {
            return Ok(Applied::Stale);
        }
        if !entity.owner.is(from) {
            return Err(not_owner(&id));
        }
        self.forget_entity(&id);
        Ok(Applied::Fanout(self.to_others(msg, from)))
    }

    fn apply_ownership(&mut self, from: &SessionId, msg: WireMessage) -> Result<Applied, ProtocolError> {
        let id = msg.entity.clone().unwrap_or_default();
        let record = resolve_ownership(self.entities.get(&id), &msg, from)?;
        let entity = self.entities.get_mut(&id).expect("resolved entity exists");
        entity.owner = record.owner.clone();
        entity.seq = record.granted_seq + 1;
        let grant = WireMessage::new(Kind::OwnershipGrant, self.room_id.clone())
            .from_sender(SERVER_OWNER)
            .for_entity(id.clone(), entity.seq)
            .with_body(grant_body(entity))
            .at(msg.ts_ms);
        self.ownership.insert(id, record);
        Ok(Applied::Fanout(Delivery {
            msg: grant,
            to: self.sessions.keys().cloned().collect(),
        }))
    }

    fn forget_entity(&mut self, id: &str) {
        self.entities.remove(id);
        self.ownership.remove(id);
        for s in self.sessions.values_mut() {
            if s.avatar_entity.as_deref() == Some(id) {
                s.avatar_entity = None;
            }
        }
    }

    /// Drops a session. Its non-persistent entities are deleted and its
    /// persistent ones revert to server ownership; peers are notified.
    pub fn remove_session(&mut self, session: &SessionId, plan: &mut FanoutPlan) -> bool {
        if self.sessions.remove(session).is_none() {
            return false;
        }
        let owned: Vec<String> = self
            .entities
            .values()
            .filter(|e| e.owner.is(session))
            .map(|e| e.entity_id.clone())
            .collect();
        for id in owned {
            let entity = self.entities.get_mut(&id).expect("owned entity exists");
            let next_seq = entity.seq + 1;
            if entity.persistent {
                let granted_seq = entity.seq;
                entity.owner = Owner::Server;
                entity.seq = next_seq;
                let grant = self
                    .server_msg(Kind::OwnershipGrant)
                    .for_entity(id.clone(), next_seq)
                    .with_body(grant_body(&self.entities[&id]));
                self.ownership.insert(
                    id.clone(),
                    OwnershipRecord {
                        entity_id: id.clone(),
                        owner: Owner::Server,
                        granted_seq,
                    },
                );
                self.broadcast(plan, grant, None);
            } else {
                self.forget_entity(&id);
                let delete = self.server_msg(Kind::EntityDelete).for_entity(id, next_seq);
                self.broadcast(plan, delete, None);
            }
        }
        let presence = self
            .server_msg(Kind::Presence)
            .with_field("session", session.as_str())
            .with_field("state", "leave");
        self.broadcast(plan, presence, None);
        self.touch();
        true
    }

    /// Evicts sessions silent for longer than `timeout_ms`.
    pub fn heartbeat_sweep(&mut self, now_ms: u64, timeout_ms: u64) -> (Vec<SessionId>, FanoutPlan) {
        let stale: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| now_ms.saturating_sub(s.last_heartbeat_ms) > timeout_ms)
            .map(|s| s.session_id.clone())
            .collect();
        let mut plan = FanoutPlan::default();
        for s in &stale {
            self.remove_session(s, &mut plan);
        }
        (stale, plan)
    }

    /// Persistent entities as they would survive a restart: owners that
    /// are sessions revert to the server.
    pub fn snapshot(&self) -> RoomSnapshot {
        let entities = self
            .entities
            .values()
            .filter(|e| e.persistent)
            .cloned()
            .map(|mut e| {
                if let Owner::Session(_) = e.owner {
                    e.owner = Owner::Server;
                }
                e
            })
            .collect();
        RoomSnapshot {
            room_id: self.room_id.clone(),
            world_id: self.world.world_id.clone(),
            entities,
        }
    }

    /// Clears `dirty` if nothing changed since the snapshot at `revision`.
    pub fn mark_persisted(&mut self, revision: u64) {
        if self.revision == revision {
            self.dirty = false;
        }
    }

    /// Frame that recreates `entity` for a client that missed it.
    pub fn create_message(&self, entity: &EntityRecord) -> WireMessage {
        WireMessage::new(Kind::EntityCreate, self.room_id.clone())
            .from_sender(entity.owner.as_str())
            .for_entity(entity.entity_id.clone(), entity.seq)
            .with_body(create_body(entity))
    }

    fn server_msg(&self, kind: Kind) -> WireMessage {
        WireMessage::new(kind, self.room_id.clone()).from_sender(SERVER_OWNER)
    }

    fn to_others(&self, msg: WireMessage, origin: &SessionId) -> Delivery {
        Delivery {
            to: self.sessions.keys().filter(|s| *s != origin).cloned().collect(),
            msg,
        }
    }

    fn broadcast(&self, plan: &mut FanoutPlan, msg: WireMessage, except: Option<&SessionId>) {
        let to: Vec<SessionId> = self
            .sessions
            .keys()
            .filter(|s| Some(*s) != except)
            .cloned()
            .collect();
        if !to.is_empty() {
            plan.deliveries.push(Delivery { msg, to });
        }
    }

    fn error_to(&self, to: &SessionId, context: &WireMessage, err: ProtocolError) -> Delivery {
        let mut msg = err.to_message(&self.room_id);
        msg.entity = context.entity.clone();
        msg.ts_ms = context.ts_ms;
        Delivery {
            msg,
            to: vec![to.clone()],
        }
    }
}

enum Applied {
    Stale,
    Fanout(Delivery),
}

fn push(out: &mut Vec<Option<Delivery>>, d: Delivery) {
    out.push(Some(d));
}

fn not_owner(id: &str) -> ProtocolError {
    ProtocolError::new(ErrorCode::Forbidden, format!("not the owner of {id}"))
}

/// Value-semantics form of [`RoomState::step`].
pub fn room_step(mut room: RoomState, batch: Vec<Inbound>, opts: &StepOptions) -> (RoomState, FanoutPlan) {
    let (plan, _) = room.step(batch, opts);
    (room, plan)
}

#[cfg(test)]
mod tests;
