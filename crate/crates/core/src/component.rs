//! ECS components: named, flat data containers attached to entities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the component every entity carries.
pub const TRANSFORM: &str = "transform";

/// Field names of the transform component, in wire order.
pub const TRANSFORM_FIELDS: [&str; 9] = ["px", "py", "pz", "rx", "ry", "rz", "sx", "sy", "sz"];

/// A single component field value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Converts a JSON value, rejecting arrays, objects, null and numbers
    /// that do not fit an `f64`.
    pub fn from_json(value: &serde_json::Value) -> Option<Scalar> {
        match value {
            serde_json::Value::Bool(b) => Some(Scalar::Bool(*b)),
            serde_json::Value::Number(n) => n.as_f64().map(Scalar::Number),
            serde_json::Value::String(s) => Some(Scalar::Text(s.clone())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Scalar::Bool(b) => serde_json::Value::Bool(*b),
            Scalar::Number(n) => serde_json::Number::from_f64(*n)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Scalar::Text(s) => serde_json::Value::String(s.clone()),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Number(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Text(v.to_owned())
    }
}

pub type ComponentData = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComponentError {
    #[error("component name is empty")]
    EmptyName,
    #[error("transform field `{0}` is missing")]
    MissingField(String),
    #[error("transform field `{0}` must be a finite number")]
    NotFinite(String),
    #[error("transform scale `{0}` must be greater than zero")]
    NonPositiveScale(String),
    #[error("field `{0}` is not a scalar")]
    NotScalar(String),
}

/// A named component and the sequence number it was last written at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentState {
    pub name: String,
    pub data: ComponentData,
    #[serde(default)]
    pub version: u64,
}

impl ComponentState {
    pub fn new(name: impl Into<String>, data: ComponentData) -> Self {
        ComponentState {
            name: name.into(),
            data,
            version: 0,
        }
    }

    pub fn transform(t: &Transform) -> Self {
        ComponentState::new(TRANSFORM, t.to_data())
    }

    pub fn is_transform(&self) -> bool {
        self.name == TRANSFORM
    }

    /// Validates the component and brings it into canonical form: transform
    /// components are reduced to their nine fields with rotations wrapped
    /// into `[0, 360)`. Other components pass through untouched.
    pub fn normalized(self) -> Result<ComponentState, ComponentError> {
        if self.name.is_empty() {
            return Err(ComponentError::EmptyName);
        }
        if !self.is_transform() {
            return Ok(self);
        }
        let t = Transform::from_data(&self.data)?.normalized();
        Ok(ComponentState {
            name: self.name,
            data: t.to_data(),
            version: self.version,
        })
    }
}

/// Position in meters, Euler rotation in degrees (XYZ), unitless scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Transform::at(0.0, 0.0, 0.0)
    }
}

impl Transform {
    pub fn at(px: f64, py: f64, pz: f64) -> Self {
        Transform {
            px,
            py,
            pz,
            rx: 0.0,
            ry: 0.0,
            rz: 0.0,
            sx: 1.0,
            sy: 1.0,
            sz: 1.0,
        }
    }

    pub fn with_rotation(mut self, rx: f64, ry: f64, rz: f64) -> Self {
        self.rx = rx;
        self.ry = ry;
        self.rz = rz;
        self
    }

    fn fields(&self) -> [f64; 9] {
        [
            self.px, self.py, self.pz, self.rx, self.ry, self.rz, self.sx, self.sy, self.sz,
        ]
    }

    /// Reads the nine transform fields, ignoring any others.
    pub fn from_data(data: &ComponentData) -> Result<Transform, ComponentError> {
        let mut v = [0.0; 9];
        for (slot, name) in v.iter_mut().zip(TRANSFORM_FIELDS) {
            let value = data
                .get(name)
                .ok_or_else(|| ComponentError::MissingField(name.to_owned()))?;
            *slot = value
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ComponentError::NotFinite(name.to_owned()))?;
        }
        for (value, name) in v[6..].iter().zip(&TRANSFORM_FIELDS[6..]) {
            if *value <= 0.0 {
                return Err(ComponentError::NonPositiveScale((*name).to_owned()));
            }
        }
        Ok(Transform {
            px: v[0],
            py: v[1],
            pz: v[2],
            rx: v[3],
            ry: v[4],
            rz: v[5],
            sx: v[6],
            sy: v[7],
            sz: v[8],
        })
    }

    pub fn to_data(&self) -> ComponentData {
        TRANSFORM_FIELDS
            .iter()
            .zip(self.fields())
            .map(|(k, v)| ((*k).to_owned(), Scalar::Number(v)))
            .collect()
    }

    pub fn normalized(self) -> Transform {
        Transform {
            rx: normalize_degrees(self.rx),
            ry: normalize_degrees(self.ry),
            rz: normalize_degrees(self.rz),
            ..self
        }
    }
}

/// Wraps an angle into the half-open interval `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid rounds tiny negative inputs up to exactly 360.0, and keeps -0.0.
    if r >= 360.0 || r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Maps a normalized angle to the signed range `(-180, 180]`, the form scene
/// markup is written in.
pub fn signed_degrees(deg: f64) -> f64 {
    let r = normalize_degrees(deg);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}
