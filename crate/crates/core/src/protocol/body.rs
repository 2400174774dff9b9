//! Kind-specific payloads.
//!
//! * `EntityCreate`: `{"components": {name: {field: scalar}}, "persistent", "transferable"}`
//! * `EntityUpdate`: the component's fields, flat, plus `"component"` when it
//!   is not the transform. Extra fields ride along untouched.
//! * `OwnershipGrant`: `{"owner", "record"}` where `record` is the full
//!   authoritative entity after the transfer.
//! * `Snapshot`: `{"entities": [record, ...]}`

use serde_json::{Map, Value};
use thiserror::Error;

use super::message::{Body, WireMessage};
use crate::component::{ComponentData, ComponentError, ComponentState, Scalar, TRANSFORM};
use crate::entity::{EntityRecord, Owner};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BodyError {
    #[error("missing body field `{0}`")]
    Missing(String),
    #[error("body field `{0}` has the wrong type")]
    Invalid(String),
    #[error("invalid component: {0}")]
    Component(#[from] ComponentError),
}

fn flat(data: &ComponentData) -> Map<String, Value> {
    data.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()
}

fn scalars(obj: &Map<String, Value>) -> ComponentData {
    obj.iter()
        .filter_map(|(k, v)| Scalar::from_json(v).map(|s| (k.clone(), s)))
        .collect()
}

pub fn create_body(record: &EntityRecord) -> Body {
    let components: Map<String, Value> = record
        .components
        .iter()
        .map(|(name, c)| (name.clone(), Value::Object(flat(&c.data))))
        .collect();
    let mut body = Body::new();
    body.insert("components".into(), Value::Object(components));
    body.insert("persistent".into(), Value::Bool(record.persistent));
    body.insert("transferable".into(), Value::Bool(record.transferable));
    body
}

/// Builds the record an `EntityCreate` describes, owned by `creator`.
pub fn entity_from_create(msg: &WireMessage, creator: Owner) -> Result<EntityRecord, BodyError> {
    let entity_id = msg
        .entity
        .clone()
        .ok_or_else(|| BodyError::Missing("entity".into()))?;
    let seq = msg.seq.ok_or_else(|| BodyError::Missing("seq".into()))?;
    let components = match msg.body.get("components") {
        None => return Err(BodyError::Missing("components".into())),
        Some(Value::Object(c)) => c,
        Some(_) => return Err(BodyError::Invalid("components".into())),
    };
    let mut states = Vec::with_capacity(components.len());
    for (name, data) in components {
        let Value::Object(data) = data else {
            return Err(BodyError::Invalid(format!("components.{name}")));
        };
        states.push(ComponentState::new(name.clone(), scalars(data)));
    }
    let mut record = EntityRecord::new(entity_id, creator, seq, states)?;
    record.persistent = bool_field(&msg.body, "persistent", false)?;
    record.transferable = bool_field(&msg.body, "transferable", true)?;
    Ok(record)
}

fn bool_field(body: &Body, key: &str, default: bool) -> Result<bool, BodyError> {
    match body.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(Value::Bool(b)) => Ok(*b),
        Some(_) => Err(BodyError::Invalid(key.into())),
    }
}

pub fn update_body(component: &ComponentState) -> Body {
    let mut body = flat(&component.data);
    if component.name != TRANSFORM {
        body.insert("component".into(), Value::String(component.name.clone()));
    }
    body
}

/// Reads the component an `EntityUpdate` carries. Non-scalar fields are
/// ignored; transform extras are dropped later by normalization.
pub fn update_from_body(body: &Body) -> Result<ComponentState, BodyError> {
    let name = match body.get("component") {
        None | Some(Value::Null) => TRANSFORM.to_owned(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(BodyError::Invalid("component".into())),
    };
    let mut data = scalars(body);
    data.remove("component");
    Ok(ComponentState::new(name, data))
}

pub fn grant_body(record: &EntityRecord) -> Body {
    let mut body = Body::new();
    body.insert("owner".into(), Value::String(record.owner.as_str().to_owned()));
    body.insert(
        "record".into(),
        serde_json::to_value(record).expect("entity records serialize"),
    );
    body
}

pub fn record_from_grant(msg: &WireMessage) -> Result<EntityRecord, BodyError> {
    let value = msg
        .body
        .get("record")
        .ok_or_else(|| BodyError::Missing("record".into()))?;
    serde_json::from_value(value.clone()).map_err(|_| BodyError::Invalid("record".into()))
}

pub fn snapshot_body<'a>(entities: impl IntoIterator<Item = &'a EntityRecord>) -> Body {
    let list: Vec<Value> = entities
        .into_iter()
        .map(|e| serde_json::to_value(e).expect("entity records serialize"))
        .collect();
    let mut body = Body::new();
    body.insert("entities".into(), Value::Array(list));
    body
}

pub fn snapshot_entities(msg: &WireMessage) -> Result<Vec<EntityRecord>, BodyError> {
    let value = msg
        .body
        .get("entities")
        .ok_or_else(|| BodyError::Missing("entities".into()))?;
    serde_json::from_value(value.clone()).map_err(|_| BodyError::Invalid("entities".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::Transform;
    use crate::protocol::Kind;
    use crate::SessionId;

    fn avatar() -> EntityRecord {
        let mut label = ComponentData::new();
        label.insert("label".into(), "ada".into());
        EntityRecord::new(
            "s-1-avatar",
            Owner::Session(SessionId::from("s-1")),
            1,
            [
                ComponentState::transform(&Transform::at(1.0, 0.0, 2.0)),
                ComponentState::new("avatar", label),
            ],
        )
        .unwrap()
    }

    #[test]
    fn create_round_trip() {
        let rec = avatar();
        let msg = WireMessage::new(Kind::EntityCreate, "r")
            .for_entity(&rec.entity_id, rec.seq)
            .with_body(create_body(&rec));
        let back = entity_from_create(&msg, rec.owner.clone()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn create_without_transform_fails() {
        let msg = WireMessage::new(Kind::EntityCreate, "r")
            .for_entity("e", 1)
            .with_field("components", serde_json::json!({"avatar": {}}));
        assert!(matches!(
            entity_from_create(&msg, Owner::Server),
            Err(BodyError::Component(ComponentError::MissingField(_)))
        ));
    }

    #[test]
    fn update_defaults_to_transform() {
        let c = ComponentState::transform(&Transform::at(1.0, 2.0, 3.0));
        let body = update_body(&c);
        assert!(!body.contains_key("component"));
        assert_eq!(update_from_body(&body).unwrap(), c);

        let mut glow = ComponentData::new();
        glow.insert("level".into(), 2.0.into());
        let c = ComponentState::new("glow", glow);
        assert_eq!(update_from_body(&update_body(&c)).unwrap(), c);
    }

    #[test]
    fn grant_and_snapshot_carry_full_records() {
        let rec = avatar();
        let grant = WireMessage::new(Kind::OwnershipGrant, "r")
            .for_entity(&rec.entity_id, rec.seq)
            .with_body(grant_body(&rec));
        assert_eq!(record_from_grant(&grant).unwrap(), rec);
        let snap = WireMessage::new(Kind::Snapshot, "r").with_body(snapshot_body([&rec]));
        assert_eq!(snapshot_entities(&snap).unwrap(), vec![rec]);
    }
}
