//! First-run content: the hello-world world and its globe texture.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use openverse_core::{hello_world, HELLO_TEXTURE_PATH, HELLO_WORLD_ID};
use tracing::info;

use crate::persist::{PersistError, Store};

const TEXTURE_W: u32 = 256;
const TEXTURE_H: u32 = 128;

/// Writes the hello-world files that are missing. Existing files are kept.
pub fn seed_hello_world(store: &Store) -> Result<(), PersistError> {
    let world_path = store.world_path(HELLO_WORLD_ID);
    if !world_path.exists() {
        store.save_world(&hello_world())?;
        info!(path = %world_path.display(), "seeded world");
    }
    let texture_path = store.assets_dir().join(HELLO_TEXTURE_PATH);
    if !texture_path.exists() {
        if let Some(parent) = texture_path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| PersistError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        store.write_atomic(&texture_path, &globe_texture_png())?;
        info!(path = %texture_path.display(), "seeded texture");
    }
    Ok(())
}

/// A small equirectangular earth-like texture, identical on every call.
pub fn globe_texture_png() -> Vec<u8> {
    let img = RgbImage::from_fn(TEXTURE_W, TEXTURE_H, |x, y| {
        let lon = x as f64 / TEXTURE_W as f64 * std::f64::consts::TAU;
        let lat = (y as f64 / TEXTURE_H as f64 - 0.5) * std::f64::consts::PI;
        if lat.abs() > 1.35 {
            return Rgb([236, 240, 244]);
        }
        let land = (lon * 2.0).sin() * (lat * 3.0).cos() + 0.6 * (lon * 5.0 + lat * 2.0).sin()
            - 0.35 * (lon * 3.0 - lat * 4.0).cos();
        if land > 0.45 {
            let shade = (40.0 * lat.cos()) as u8;
            Rgb([52 + shade / 2, 120 + shade, 60])
        } else {
            let depth = ((0.45 - land) * 40.0).min(60.0) as u8;
            Rgb([20, 80 - depth / 2, 170 - depth])
        }
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}
