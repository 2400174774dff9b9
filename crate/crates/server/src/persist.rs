//! On-disk layout under the persist directory:
//!
//! ```text
//! <persist-dir>/worlds/<world_id>.world.json
//! <persist-dir>/rooms/<room_id>.snapshot.json
//! <persist-dir>/assets/...
//! ```
//!
//! Snapshots are written to a temp file in the same directory, synced and
//! renamed over the previous one.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use openverse_core::{validate_world_with, ValidationOptions, WorldDescription};
use thiserror::Error;
use tracing::{info, warn};

use crate::room::{RoomSnapshot, RoomState};

pub const WORLDS_DIR: &str = "worlds";
pub const ROOMS_DIR: &str = "rooms";
pub const ASSETS_DIR: &str = "assets";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("snapshot for room {0} could not be encoded")]
    Encode(String),
}

#[derive(Debug, Error)]
pub enum WorldLoadError {
    #[error("no world {0}")]
    NotFound(String),
    #[error("world file {path} is unreadable: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("world file {path} is not valid JSON: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("world {world_id} is invalid: {violations}")]
    Invalid { world_id: String, violations: String },
}

/// What was found where a room snapshot should be.
#[derive(Debug)]
pub enum SnapshotLoad {
    Missing,
    Loaded(RoomSnapshot),
    /// The file was unreadable and has been moved aside to the given path.
    Quarantined(PathBuf),
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    tmp_counter: Arc<AtomicU64>,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store {
            root: root.into(),
            tmp_counter: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn worlds_dir(&self) -> PathBuf {
        self.root.join(WORLDS_DIR)
    }

    pub fn rooms_dir(&self) -> PathBuf {
        self.root.join(ROOMS_DIR)
    }

    pub fn assets_dir(&self) -> PathBuf {
        self.root.join(ASSETS_DIR)
    }

    pub fn world_path(&self, world_id: &str) -> PathBuf {
        self.worlds_dir().join(format!("{world_id}.world.json"))
    }

    pub fn snapshot_path(&self, room_id: &str) -> PathBuf {
        self.rooms_dir().join(format!("{room_id}.snapshot.json"))
    }

    /// Creates the directory layout and proves it is writable.
    pub fn prepare(&self) -> Result<(), PersistError> {
        for dir in [self.worlds_dir(), self.rooms_dir(), self.assets_dir()] {
            fs::create_dir_all(&dir).map_err(|source| PersistError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        let probe = self.rooms_dir().join(".write-probe");
        fs::write(&probe, b"ok")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|source| PersistError::Io {
                path: probe,
                source,
            })
    }

    pub fn load_world(
        &self,
        world_id: &str,
        opts: &ValidationOptions,
    ) -> Result<WorldDescription, WorldLoadError> {
        let path = self.world_path(world_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(WorldLoadError::NotFound(world_id.to_owned()))
            }
            Err(source) => return Err(WorldLoadError::Io { path, source }),
        };
        let world = WorldDescription::from_json(&text)
            .map_err(|source| WorldLoadError::Parse { path: path.clone(), source })?;
        let violations = validate_world_with(&world, opts);
        if !violations.is_empty() || world.world_id != world_id {
            let mut list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            if world.world_id != world_id {
                list.push(format!("world_id: file is named {world_id}"));
            }
            return Err(WorldLoadError::Invalid {
                world_id: world_id.to_owned(),
                violations: list.join("; "),
            });
        }
        Ok(world)
    }

    pub fn save_world(&self, world: &WorldDescription) -> Result<PathBuf, PersistError> {
        let path = self.world_path(&world.world_id);
        self.write_atomic(&path, world.to_json_pretty().as_bytes())?;
        Ok(path)
    }

    /// Writes a snapshot atomically and returns its path.
    pub fn write_snapshot(&self, snapshot: &RoomSnapshot) -> Result<PathBuf, PersistError> {
        let bytes = serde_json::to_vec_pretty(snapshot)
            .map_err(|_| PersistError::Encode(snapshot.room_id.clone()))?;
        let path = self.snapshot_path(&snapshot.room_id);
        self.write_atomic(&path, &bytes)?;
        Ok(path)
    }

    pub fn read_snapshot(&self, room_id: &str, world_id: &str) -> SnapshotLoad {
        let path = self.snapshot_path(room_id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return SnapshotLoad::Missing,
            Err(e) => {
                warn!(room = room_id, error = %e, "snapshot unreadable");
                return self.quarantine(&path);
            }
        };
        match serde_json::from_slice::<RoomSnapshot>(&bytes) {
            Ok(s) if s.room_id == room_id && s.world_id == world_id => SnapshotLoad::Loaded(s),
            Ok(_) => {
                warn!(room = room_id, "snapshot belongs to another room or world");
                self.quarantine(&path)
            }
            Err(e) => {
                warn!(room = room_id, error = %e, "snapshot is corrupt");
                self.quarantine(&path)
            }
        }
    }

    fn quarantine(&self, path: &Path) -> SnapshotLoad {
        let mut target = path.with_extension("json.corrupt");
        let mut n = 1;
        while target.exists() {
            target = path.with_extension(format!("json.corrupt.{n}"));
            n += 1;
        }
        match fs::rename(path, &target) {
            Ok(()) => {
                warn!(from = %path.display(), to = %target.display(), "quarantined snapshot");
                SnapshotLoad::Quarantined(target)
            }
            Err(e) => {
                warn!(path = %path.display(), error = %e, "could not quarantine snapshot");
                SnapshotLoad::Missing
            }
        }
    }

    pub fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
        let io_err = |source| PersistError::Io {
            path: path.to_owned(),
            source,
        };
        let dir = path.parent().unwrap_or(Path::new("."));
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("snapshot");
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{name}.tmp-{}-{n}", std::process::id()));

        let result = (|| {
            let mut f = OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            drop(f);
            fs::rename(&tmp, path)?;
            // Make the rename itself durable; not all platforms allow it.
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
            Ok(())
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result.map_err(io_err)
    }
}

/// Writes the room's persistent entities. On failure the error is logged
/// and `dirty` stays set.
pub fn persist_room(room: &mut RoomState, store: &Store) -> Result<PathBuf, PersistError> {
    let revision = room.revision();
    let snapshot = room.snapshot();
    match store.write_snapshot(&snapshot) {
        Ok(path) => {
            room.mark_persisted(revision);
            info!(room = %room.room_id, entities = snapshot.entities.len(), path = %path.display(), "persisted room");
            Ok(path)
        }
        Err(e) => {
            warn!(room = %room.room_id, error = %e, "persist failed");
            Err(e)
        }
    }
}

/// World static entities overlaid with the stored snapshot, if any.
/// A corrupt snapshot is quarantined and the world is loaded alone.
pub fn load_room(world: Arc<WorldDescription>, store: &Store) -> RoomState {
    let snapshot = match store.read_snapshot(&world.world_id, &world.world_id) {
        SnapshotLoad::Loaded(s) => Some(s),
        SnapshotLoad::Missing | SnapshotLoad::Quarantined(_) => None,
    };
    RoomState::from_world(world, snapshot)
}
