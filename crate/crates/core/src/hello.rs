//! The canonical demo world: one textured sphere spinning around its Y axis.

use std::collections::BTreeMap;

use crate::component::{ComponentData, Scalar, Transform, TRANSFORM};
use crate::region::RegionCoord;
use crate::world::{AssetRef, EntityTemplate, WorldDescription};

pub const HELLO_WORLD_ID: &str = "hello-world";
pub const HELLO_TEXTURE_PATH: &str = "textures/globe.png";

pub fn hello_world() -> WorldDescription {
    let transform = Transform::at(0.0, 1.5, -5.0).with_rotation(0.0, 0.0, -30.0);

    let template: ComponentData = [
        ("primitive", Scalar::from("sphere")),
        ("radius", Scalar::from(1.0)),
        ("src", Scalar::from("globe-texture")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();

    let animation: ComponentData = [
        ("property", Scalar::from("rotation")),
        ("to", Scalar::from("0 360 -30")),
        ("loop", Scalar::from(true)),
        ("dur", Scalar::from(10_000.0)),
        ("easing", Scalar::from("linear")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();

    let mut components = BTreeMap::new();
    components.insert(TRANSFORM.to_owned(), transform.to_data());
    components.insert("template".to_owned(), template);
    components.insert("animation".to_owned(), animation);

    WorldDescription {
        world_id: HELLO_WORLD_ID.to_owned(),
        title: "Hello world".to_owned(),
        spawn: Transform::at(0.0, 0.0, 0.0),
        static_entities: vec![EntityTemplate {
            entity_id: "globe".to_owned(),
            components,
            persistent: true,
            transferable: false,
        }],
        portals: vec![],
        assets: vec![AssetRef {
            asset_id: "globe-texture".to_owned(),
            path: HELLO_TEXTURE_PATH.to_owned(),
            media_type: "image/png".to_owned(),
        }],
        bounds_regions: vec![
            RegionCoord::new(-1, -1),
            RegionCoord::new(0, -1),
            RegionCoord::new(-1, 0),
            RegionCoord::new(0, 0),
        ],
    }
}
