use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::component::{ComponentError, ComponentState, Transform, TRANSFORM};

/// Server-assigned identifier for one connection epoch.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.to_owned())
    }
}

/// Who may author updates for an entity. Serialized as the session id, or
/// the literal `"server"`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Owner {
    Server,
    Session(SessionId),
}

pub const SERVER_OWNER: &str = "server";

impl Owner {
    pub fn parse(s: &str) -> Owner {
        if s == SERVER_OWNER {
            Owner::Server
        } else {
            Owner::Session(SessionId(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Owner::Server => SERVER_OWNER,
            Owner::Session(id) => id.as_str(),
        }
    }

    pub fn session(&self) -> Option<&SessionId> {
        match self {
            Owner::Server => None,
            Owner::Session(id) => Some(id),
        }
    }

    pub fn is(&self, session: &SessionId) -> bool {
        self.session() == Some(session)
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Owner {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Owner {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Owner::parse(&s))
    }
}

/// Outcome of offering an update to an entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    Stale,
}

/// One replicated scene object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub owner: Owner,
    pub creator: Owner,
    pub seq: u64,
    pub components: BTreeMap<String, ComponentState>,
    /// Survives its owner disconnecting.
    #[serde(default)]
    pub persistent: bool,
    /// Whether ownership may move to a requesting session.
    #[serde(default = "default_true")]
    pub transferable: bool,
}

fn default_true() -> bool {
    true
}

impl EntityRecord {
    /// Builds an entity from a component set, which must include a valid
    /// transform. Components are normalized and stamped with `seq`.
    pub fn new(
        entity_id: impl Into<String>,
        owner: Owner,
        seq: u64,
        components: impl IntoIterator<Item = ComponentState>,
    ) -> Result<EntityRecord, ComponentError> {
        let mut map = BTreeMap::new();
        for c in components {
            let mut c = c.normalized()?;
            c.version = seq;
            map.insert(c.name.clone(), c);
        }
        if !map.contains_key(TRANSFORM) {
            return Err(ComponentError::MissingField(TRANSFORM.to_owned()));
        }
        Ok(EntityRecord {
            entity_id: entity_id.into(),
            creator: owner.clone(),
            owner,
            seq,
            components: map,
            persistent: false,
            transferable: true,
        })
    }

    pub fn transform(&self) -> Transform {
        self.components
            .get(TRANSFORM)
            .and_then(|c| Transform::from_data(&c.data).ok())
            .unwrap_or_default()
    }

    /// Applies `update` if `update_seq` is strictly newer than the entity.
    ///
    /// Malformed transforms are rejected even when stale. Unknown component
    /// names are stored as-is.
    pub fn apply_update(
        &mut self,
        update: ComponentState,
        update_seq: u64,
    ) -> Result<UpdateOutcome, ComponentError> {
        let mut update = update.normalized()?;
        if update_seq <= self.seq {
            return Ok(UpdateOutcome::Stale);
        }
        update.version = update_seq;
        self.components.insert(update.name.clone(), update);
        self.seq = update_seq;
        Ok(UpdateOutcome::Applied)
    }

    /// True when this entity carries the reserved `avatar` component.
    pub fn is_avatar(&self) -> bool {
        self.components.contains_key("avatar")
    }
}

/// Value-semantics form of [`EntityRecord::apply_update`].
pub fn apply_component_update(
    entity: EntityRecord,
    update: ComponentState,
    update_seq: u64,
) -> Result<EntityRecord, ComponentError> {
    let mut entity = entity;
    entity.apply_update(update, update_seq)?;
    Ok(entity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::Scalar;

    fn entity(seq: u64) -> EntityRecord {
        EntityRecord::new(
            "e1",
            Owner::Server,
            seq,
            [ComponentState::transform(&Transform::default())],
        )
        .unwrap()
    }

    #[test]
    fn strictly_newer_update_applies() {
        let e = apply_component_update(
            entity(5),
            ComponentState::transform(&Transform::at(1.0, 0.0, 0.0)),
            6,
        )
        .unwrap();
        assert_eq!(e.seq, 6);
        assert_eq!(e.transform().px, 1.0);
        assert_eq!(e.components[TRANSFORM].version, 6);
    }

    #[test]
    fn equal_seq_is_stale() {
        let before = entity(5);
        let after = apply_component_update(
            before.clone(),
            ComponentState::transform(&Transform::at(1.0, 0.0, 0.0)),
            5,
        )
        .unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn rotation_is_wrapped_on_apply() {
        let t = Transform::default().with_rotation(0.0, 450.0, 0.0);
        let e = apply_component_update(entity(0), ComponentState::transform(&t), 1).unwrap();
        assert_eq!(e.transform().ry, 90.0);
    }

    #[test]
    fn malformed_transform_is_an_error() {
        let mut c = ComponentState::transform(&Transform::default());
        c.data.insert("sx".into(), Scalar::Number(-1.0));
        assert!(matches!(
            entity(0).apply_update(c, 1),
            Err(ComponentError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn unknown_component_is_stored() {
        let mut data = BTreeMap::new();
        data.insert("level".to_string(), Scalar::Number(3.0));
        let e = apply_component_update(entity(0), ComponentState::new("glow", data), 1).unwrap();
        assert_eq!(e.components["glow"].data["level"], Scalar::Number(3.0));
    }

    #[test]
    fn entity_requires_transform() {
        let err = EntityRecord::new("x", Owner::Server, 0, []).unwrap_err();
        assert_eq!(err, ComponentError::MissingField(TRANSFORM.into()));
    }

    #[test]
    fn owner_serializes_as_plain_string() {
        let json = serde_json::to_string(&Owner::Server).unwrap();
        assert_eq!(json, "\"server\"");
        let back: Owner = serde_json::from_str("\"s-1\"").unwrap();
        assert_eq!(back, Owner::Session(SessionId::from("s-1")));
    }
}
