//! Client-side mirror of a room, applying server frames with the same
//! last-writer-wins rule the server uses.

use std::collections::BTreeMap;

use crate::entity::{EntityRecord, Owner, UpdateOutcome};
use crate::protocol::{
    entity_from_create, record_from_grant, snapshot_entities, update_from_body, Kind,
    ProtocolError, WireMessage,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplicaEvent {
    Applied,
    /// The frame was older than what the replica already holds.
    Stale,
    /// The frame does not change entity state.
    Ignored,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Replica {
    entities: BTreeMap<String, EntityRecord>,
}

impl Replica {
    pub fn new() -> Self {
        Replica::default()
    }

    pub fn entities(&self) -> &BTreeMap<String, EntityRecord> {
        &self.entities
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.entities.get(entity_id)
    }

    /// Canonical encoding of the replicated state, for equality checks.
    pub fn canonical(&self) -> String {
        crate::canonical_entities(self.entities.values())
    }

    pub fn apply(&mut self, msg: &WireMessage) -> Result<ReplicaEvent, ProtocolError> {
        match msg.kind {
            Kind::Snapshot => {
                self.entities = snapshot_entities(msg)?
                    .into_iter()
                    .map(|e| (e.entity_id.clone(), e))
                    .collect();
                Ok(ReplicaEvent::Applied)
            }
            Kind::EntityCreate => {
                let record = entity_from_create(msg, Owner::parse(&msg.sender))?;
                if self
                    .entities
                    .get(&record.entity_id)
                    .is_some_and(|e| e.seq >= record.seq)
                {
                    return Ok(ReplicaEvent::Stale);
                }
                self.entities.insert(record.entity_id.clone(), record);
                Ok(ReplicaEvent::Applied)
            }
            Kind::EntityUpdate => {
                let seq = msg.seq.unwrap_or(0);
                let Some(entity) = msg.entity_id().and_then(|id| self.entities.get_mut(id)) else {
                    return Ok(ReplicaEvent::Ignored);
                };
                let update = update_from_body(&msg.body)?;
                match entity.apply_update(update, seq).map_err(crate::protocol::BodyError::from)? {
                    UpdateOutcome::Applied => Ok(ReplicaEvent::Applied),
                    UpdateOutcome::Stale => Ok(ReplicaEvent::Stale),
                }
            }
            Kind::EntityDelete => {
                let seq = msg.seq.unwrap_or(0);
                let id = msg.entity_id().unwrap_or_default();
                match self.entities.get(id) {
                    Some(e) if seq > e.seq => {
                        self.entities.remove(id);
                        Ok(ReplicaEvent::Applied)
                    }
                    Some(_) => Ok(ReplicaEvent::Stale),
                    None => Ok(ReplicaEvent::Ignored),
                }
            }
            Kind::OwnershipGrant => {
                // Authoritative: overrides anything applied optimistically.
                let record = record_from_grant(msg)?;
                self.entities.insert(record.entity_id.clone(), record);
                Ok(ReplicaEvent::Applied)
            }
            _ => Ok(ReplicaEvent::Ignored),
        }
    }
}
