//! Fixed-size ground regions.

use serde::{Deserialize, Serialize};

use crate::WorldError;

/// Edge length of one region in meters.
pub const REGION_SIDE: u32 = 256;

/// Area of one region in square meters.
pub const REGION_AREA: u64 = (REGION_SIDE as u64) * (REGION_SIDE as u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionCoord {
    pub rx: i64,
    pub rz: i64,
    #[serde(default = "default_side")]
    pub side: u32,
}

fn default_side() -> u32 {
    REGION_SIDE
}

impl RegionCoord {
    pub fn new(rx: i64, rz: i64) -> Self {
        RegionCoord {
            rx,
            rz,
            side: REGION_SIDE,
        }
    }

    /// Whether the ground point `(px, pz)` falls inside this region.
    pub fn contains(&self, px: f64, pz: f64) -> bool {
        let side = f64::from(self.side);
        let (x0, z0) = (self.rx as f64 * side, self.rz as f64 * side);
        x0 <= px && px < x0 + side && z0 <= pz && pz < z0 + side
    }
}

/// Region containing the ground point `(px, pz)`.
pub fn region_of(px: f64, pz: f64) -> Result<RegionCoord, WorldError> {
    if !px.is_finite() || !pz.is_finite() {
        return Err(WorldError::InvalidPosition { px, pz });
    }
    let side = f64::from(REGION_SIDE);
    Ok(RegionCoord::new(
        (px / side).floor() as i64,
        (pz / side).floor() as i64,
    ))
}
