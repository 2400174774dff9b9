use serde::{Deserialize, Serialize};

use super::message::{Kind, WireMessage};
use super::{ErrorCode, ProtocolError};
use crate::entity::{EntityRecord, Owner, SessionId};

/// Who owns an entity, and the entity seq at the moment ownership moved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnershipRecord {
    pub entity_id: String,
    pub owner: Owner,
    pub granted_seq: u64,
}

impl OwnershipRecord {
    pub fn of(entity: &EntityRecord) -> Self {
        OwnershipRecord {
            entity_id: entity.entity_id.clone(),
            owner: entity.owner.clone(),
            granted_seq: entity.seq,
        }
    }
}

/// Grant-on-request: a transferable entity always moves to the requester.
///
/// Returns the new ownership record. Its `granted_seq` is the entity seq at
/// grant time; the caller re-stamps the entity to `granted_seq + 1` so every
/// update the previous owner still has in flight is stale.
pub fn resolve_ownership(
    entity: Option<&EntityRecord>,
    request: &WireMessage,
    requester: &SessionId,
) -> Result<OwnershipRecord, ProtocolError> {
    if request.kind != Kind::OwnershipRequest {
        return Err(ProtocolError::new(
            ErrorCode::Forbidden,
            format!("expected OwnershipRequest, got {}", request.kind),
        ));
    }
    let requested = request.entity_id().unwrap_or_default();
    let entity = entity
        .filter(|e| e.entity_id == requested)
        .ok_or_else(|| ProtocolError::new(ErrorCode::NoSuchEntity, format!("no entity {requested}")))?;
    if !entity.transferable {
        return Err(ProtocolError::new(
            ErrorCode::Forbidden,
            format!("entity {requested} is not transferable"),
        ));
    }
    Ok(OwnershipRecord {
        entity_id: entity.entity_id.clone(),
        owner: Owner::Session(requester.clone()),
        granted_seq: entity.seq,
    })
}
