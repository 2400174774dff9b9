//! Declarative world descriptions and their validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::component::{ComponentData, ComponentState, Transform, TRANSFORM};
use crate::entity::{EntityRecord, Owner};
use crate::region::{region_of, RegionCoord, REGION_SIDE};

/// How a portal opens its destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenMode {
    /// Navigate the current window.
    Replace,
    /// Open in a new window, like `target="_blank"`.
    NewWindow,
}

/// A hyperlink into another world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Portal {
    pub portal_id: String,
    pub position: Transform,
    pub target_url: String,
    #[serde(default = "default_open_mode")]
    pub open_mode: OpenMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

fn default_open_mode() -> OpenMode {
    OpenMode::Replace
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub asset_id: String,
    /// Path below the server's asset root.
    pub path: String,
    pub media_type: String,
}

/// Authoring form of a static entity: flat component data, no ownership.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityTemplate {
    pub entity_id: String,
    pub components: BTreeMap<String, ComponentData>,
    #[serde(default = "default_true")]
    pub persistent: bool,
    #[serde(default = "default_true")]
    pub transferable: bool,
}

fn default_true() -> bool {
    true
}

impl EntityTemplate {
    /// Server-owned record at seq 0.
    pub fn to_record(&self) -> Result<EntityRecord, crate::ComponentError> {
        let components = self
            .components
            .iter()
            .map(|(name, data)| ComponentState::new(name.clone(), data.clone()));
        let mut record = EntityRecord::new(self.entity_id.clone(), Owner::Server, 0, components)?;
        record.persistent = self.persistent;
        record.transferable = self.transferable;
        Ok(record)
    }

    /// Asset ids referenced by this entity (`src` fields of any component).
    pub fn asset_refs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.components.iter().filter_map(|(name, data)| {
            data.get("src")
                .and_then(|s| s.as_str())
                .map(|id| (name.as_str(), id))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldDescription {
    pub world_id: String,
    pub title: String,
    pub spawn: Transform,
    #[serde(rename = "entities", default)]
    pub static_entities: Vec<EntityTemplate>,
    #[serde(default)]
    pub portals: Vec<Portal>,
    #[serde(default)]
    pub assets: Vec<AssetRef>,
    #[serde(rename = "regions")]
    pub bounds_regions: Vec<RegionCoord>,
}

impl WorldDescription {
    pub fn from_json(text: &str) -> Result<WorldDescription, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("world description serializes")
    }

    pub fn asset(&self, asset_id: &str) -> Option<&AssetRef> {
        self.assets.iter().find(|a| a.asset_id == asset_id)
    }
}

/// A broken world invariant, located by its field path in the file format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub rule: Rule,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    WorldIdCharset,
    UnresolvedAsset(String),
    DuplicateId(String),
    InvalidTransform(String),
    MissingTransform,
    SpawnOutOfBounds,
    NoRegions,
    RegionSide(u32),
    PortalScheme,
    InvalidUrl,
    InvalidName(String),
    InvalidAssetPath,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::WorldIdCharset => f.write_str("world_id charset must be [a-z0-9-]{1,64}"),
            Rule::UnresolvedAsset(id) => write!(f, "unresolved asset {id}"),
            Rule::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Rule::InvalidTransform(why) => write!(f, "invalid transform: {why}"),
            Rule::MissingTransform => f.write_str("entity has no transform component"),
            Rule::SpawnOutOfBounds => f.write_str("spawn lies outside the world regions"),
            Rule::NoRegions => f.write_str("world must span at least one region"),
            Rule::RegionSide(side) => {
                write!(f, "region side must be {REGION_SIDE}, got {side}")
            }
            Rule::PortalScheme => f.write_str("portal target must use https"),
            Rule::InvalidUrl => f.write_str("portal target is not an absolute URL"),
            Rule::InvalidName(name) => write!(f, "invalid identifier {name:?}"),
            Rule::InvalidAssetPath => f.write_str("asset path must be relative without `..`"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ValidationOptions {
    /// Accept `http://` portal targets (local development only).
    pub allow_http_portals: bool,
}

fn world_id_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z0-9-]{1,64}$").unwrap())
}

/// Identifiers that end up as element ids, tag names or attribute names.
fn name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z][A-Za-z0-9_-]{0,63}$").unwrap())
}

pub fn validate_world(world: &WorldDescription) -> Vec<Violation> {
    validate_world_with(world, &ValidationOptions::default())
}

pub fn validate_world_with(world: &WorldDescription, opts: &ValidationOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, rule: Rule| out.push(Violation { path, rule });

    if !world_id_re().is_match(&world.world_id) {
        push("world_id".into(), Rule::WorldIdCharset);
    }

    if world.bounds_regions.is_empty() {
        push("regions".into(), Rule::NoRegions);
    }
    for (i, r) in world.bounds_regions.iter().enumerate() {
        if r.side != REGION_SIDE {
            push(format!("regions[{i}].side"), Rule::RegionSide(r.side));
        }
    }

    match Transform::from_data(&world.spawn.to_data()) {
        Err(e) => push("spawn".into(), Rule::InvalidTransform(e.to_string())),
        Ok(spawn) => {
            let inside = region_of(spawn.px, spawn.pz)
                .map(|r| world.bounds_regions.iter().any(|b| b.rx == r.rx && b.rz == r.rz))
                .unwrap_or(false);
            if !world.bounds_regions.is_empty() && !inside {
                push("spawn".into(), Rule::SpawnOutOfBounds);
            }
        }
    }

    let mut asset_ids = BTreeSet::new();
    for (i, a) in world.assets.iter().enumerate() {
        if !name_re().is_match(&a.asset_id) {
            push(format!("assets[{i}].asset_id"), Rule::InvalidName(a.asset_id.clone()));
        }
        if !asset_ids.insert(a.asset_id.as_str()) {
            push(format!("assets[{i}].asset_id"), Rule::DuplicateId(a.asset_id.clone()));
        }
        if !is_relative_path(&a.path) {
            push(format!("assets[{i}].path"), Rule::InvalidAssetPath);
        }
    }

    let mut entity_ids = BTreeSet::new();
    for (i, e) in world.static_entities.iter().enumerate() {
        let base = format!("entities[{i}]");
        if !name_re().is_match(&e.entity_id) {
            push(format!("{base}.entity_id"), Rule::InvalidName(e.entity_id.clone()));
        }
        if !entity_ids.insert(e.entity_id.as_str()) {
            push(format!("{base}.entity_id"), Rule::DuplicateId(e.entity_id.clone()));
        }
        match e.components.get(TRANSFORM) {
            None => push(format!("{base}.components"), Rule::MissingTransform),
            Some(data) => {
                if let Err(err) = Transform::from_data(data) {
                    push(
                        format!("{base}.components.transform"),
                        Rule::InvalidTransform(err.to_string()),
                    );
                }
            }
        }
        for (name, data) in &e.components {
            if !name_re().is_match(name) {
                push(format!("{base}.components"), Rule::InvalidName(name.clone()));
            }
            for field in data.keys() {
                if !name_re().is_match(field) {
                    push(
                        format!("{base}.components.{name}"),
                        Rule::InvalidName(field.clone()),
                    );
                }
            }
        }
        if let Some(primitive) = e
            .components
            .get("template")
            .and_then(|t| t.get("primitive"))
            .and_then(|p| p.as_str())
        {
            if !name_re().is_match(primitive) {
                push(
                    format!("{base}.components.template.primitive"),
                    Rule::InvalidName(primitive.to_owned()),
                );
            }
        }
        for (component, id) in e.asset_refs() {
            if !asset_ids.contains(id) {
                push(
                    format!("{base}.components.{component}.src"),
                    Rule::UnresolvedAsset(id.to_owned()),
                );
            }
        }
    }

    let mut portal_ids = BTreeSet::new();
    for (i, p) in world.portals.iter().enumerate() {
        let base = format!("portals[{i}]");
        if !name_re().is_match(&p.portal_id) {
            push(format!("{base}.portal_id"), Rule::InvalidName(p.portal_id.clone()));
        }
        if !portal_ids.insert(p.portal_id.as_str()) || entity_ids.contains(p.portal_id.as_str()) {
            push(format!("{base}.portal_id"), Rule::DuplicateId(p.portal_id.clone()));
        }
        if let Err(err) = Transform::from_data(&p.position.to_data()) {
            push(format!("{base}.position"), Rule::InvalidTransform(err.to_string()));
        }
        match url_scheme(&p.target_url) {
            None => push(format!("{base}.target_url"), Rule::InvalidUrl),
            Some("https") => {}
            Some("http") if opts.allow_http_portals => {}
            Some(_) => push(format!("{base}.target_url"), Rule::PortalScheme),
        }
    }

    out
}

/// Scheme of an absolute `scheme://host...` URL, lowercased check only.
fn url_scheme(url: &str) -> Option<&str> {
    let (scheme, rest) = url.split_once("://")?;
    let host = rest.split(['/', '?', '#']).next().unwrap_or("");
    let valid_scheme = !scheme.is_empty()
        && scheme
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "+-.".contains(c));
    let valid_rest = !host.is_empty() && !url.chars().any(|c| c.is_whitespace() || c == '"');
    (valid_scheme && valid_rest).then_some(scheme)
}

fn is_relative_path(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != "..")
        && path
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "._-/".contains(c))
}
