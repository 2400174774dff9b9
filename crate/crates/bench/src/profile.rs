use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    Orbit,
    RandomWalk,
    Idle,
}

impl std::str::FromStr for Movement {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "orbit" => Ok(Movement::Orbit),
            "random_walk" | "random-walk" => Ok(Movement::RandomWalk),
            "idle" => Ok(Movement::Idle),
            _ => Err(BenchError::Config(format!("unknown movement {s:?}"))),
        }
    }
}

impl Movement {
    pub fn as_str(self) -> &'static str {
        match self {
            Movement::Orbit => "orbit",
            Movement::RandomWalk => "random_walk",
            Movement::Idle => "idle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BotProfile {
    pub update_rate_hz: f64,
    pub movement: Movement,
    /// How long a bot streams updates, in seconds.
    pub lifetime_s: f64,
    /// Upper bound of the uniform delay added to each send time.
    pub think_jitter_ms: u64,
}

impl Default for BotProfile {
    fn default() -> Self {
        BotProfile {
            update_rate_hz: 10.0,
            movement: Movement::Orbit,
            lifetime_s: 10.0,
            think_jitter_ms: 5,
        }
    }
}

impl BotProfile {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(self.update_rate_hz > 0.0 && self.update_rate_hz <= 60.0) {
            return Err(BenchError::Config(format!(
                "update rate {} Hz outside (0, 60]",
                self.update_rate_hz
            )));
        }
        if !(self.lifetime_s.is_finite() && self.lifetime_s >= 0.0) {
            return Err(BenchError::Config(format!("invalid lifetime {}", self.lifetime_s)));
        }
        Ok(())
    }
}

/// One transform update a bot decided to send.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedSend {
    pub bot: usize,
    pub seq: u64,
    /// Offset from the start of streaming.
    pub at_ms: u64,
    pub px: f64,
    pub pz: f64,
    pub ry: f64,
}

/// Avatar spawn position of bot `idx`.
pub fn spawn_point(seed: u64, idx: usize) -> (f64, f64) {
    let mut rng = bot_rng(seed, idx);
    (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0))
}

fn bot_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx as u64 + 1);
    rng
}

/// Every update bot `idx` sends during a run, fixed by `seed` alone.
/// The avatar is created at seq 1, so updates start at seq 2.
pub fn plan_bot(seed: u64, idx: usize, profile: &BotProfile) -> Vec<PlannedSend> {
    if profile.movement == Movement::Idle {
        return Vec::new();
    }
    let (x0, z0) = spawn_point(seed, idx);
    let mut rng = bot_rng(seed, idx);
    // Skip the draws used by the spawn point.
    let _: (f64, f64) = (rng.gen(), rng.gen());
    let period_ms = 1000.0 / profile.update_rate_hz;
    let count = (profile.lifetime_s * profile.update_rate_hz).floor() as u64;
    let radius = rng.gen_range(1.0..4.0);
    let phase = rng.gen_range(0.0..TAU);
    let speed = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (mut x, mut z) = (x0, z0);

    (0..count)
        .map(|k| {
            let jitter = if profile.think_jitter_ms > 0 {
                rng.gen_range(0..=profile.think_jitter_ms)
            } else {
                0
            };
            let t = k as f64 * period_ms / 1000.0;
            let (px, pz, heading) = match profile.movement {
                Movement::Orbit => {
                    let a = phase + speed * t;
                    (x0 + radius * a.cos(), z0 + radius * a.sin(), a.to_degrees() + 90.0)
                }
                Movement::RandomWalk => {
                    let step = rng.gen_range(0.0..0.15);
                    let dir: f64 = rng.gen_range(0.0..TAU);
                    x += step * dir.cos();
                    z += step * dir.sin();
                    (x, z, dir.to_degrees())
                }
                Movement::Idle => unreachable!(),
            };
            PlannedSend {
                bot: idx,
                seq: k + 2,
                at_ms: (k as f64 * period_ms) as u64 + jitter,
                px,
                pz,
                ry: heading.rem_euclid(360.0),
            }
        })
        .collect()
}
