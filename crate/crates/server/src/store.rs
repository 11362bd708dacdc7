//! On-disk layout: `sessions/<id>/events.ndjson` is the source of truth,
//! `access.json` holds join codes and issued tokens, `snapshot.json` a
//! recent folded state. Sessions whose log fails to replay are moved under
//! `quarantine/`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use disclosure_core::game_core::{parse_ndjson, replay, EventRecord, GameError, Session, SessionState};
use serde::{Deserialize, Serialize};

use crate::ServerError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Access {
    /// join code → player
    pub codes: BTreeMap<String, String>,
    /// token → player
    pub tokens: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    last_seq: u64,
    state: SessionState,
}

#[derive(Debug, Clone)]
pub struct SessionDir {
    root: PathBuf,
}

pub struct Loaded {
    pub session: Session,
    pub access: Access,
    pub dir: SessionDir,
}

pub struct Quarantined {
    pub id: String,
    pub seq: u64,
    pub message: String,
}

pub fn sessions_root(data_dir: &Path) -> PathBuf {
    data_dir.join("sessions")
}

impl SessionDir {
    pub fn create(data_dir: &Path, id: &str) -> Result<Self, ServerError> {
        let root = sessions_root(data_dir).join(id);
        if root.exists() {
            return Err(ServerError::SessionExists(id.to_string()));
        }
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.ndjson")
    }

    pub fn append(&self, rec: &EventRecord) -> Result<(), ServerError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.events_path())?;
        f.write_all((rec.to_line() + "\n").as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn write_access(&self, access: &Access) -> Result<(), ServerError> {
        write_atomic(&self.root.join("access.json"), &serde_json::to_vec_pretty(access)?)
    }

    pub fn write_snapshot(&self, state: &SessionState) -> Result<(), ServerError> {
        let snap = Snapshot { last_seq: state.last_seq, state: state.clone() };
        write_atomic(&self.root.join("snapshot.json"), &serde_json::to_vec(&snap)?)
    }

    fn load(root: PathBuf) -> Result<Loaded, GameError> {
        let dir = SessionDir { root };
        let text = fs::read_to_string(dir.events_path())
            .map_err(|e| GameError::CorruptLog { seq: 1, message: e.to_string() })?;
        let log = parse_ndjson(&text)?;
        let state = match dir.read_snapshot(&log) {
            Some(mut state) => {
                let from = state.last_seq;
                for rec in log.iter().filter(|r| r.seq > from) {
                    state
                        .apply(rec)
                        .map_err(|e| GameError::CorruptLog { seq: rec.seq, message: e.to_string() })?;
                }
                state
            }
            None => replay(&log)?,
        };
        let access = fs::read(dir.root.join("access.json"))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        Ok(Loaded { session: Session { state, log }, access, dir })
    }

    /// A snapshot is used only if the log still contains the record it was
    /// taken at.
    fn read_snapshot(&self, log: &[EventRecord]) -> Option<SessionState> {
        let bytes = fs::read(self.root.join("snapshot.json")).ok()?;
        let snap: Snapshot = serde_json::from_slice(&bytes).ok()?;
        let covered = log.iter().any(|r| r.seq == snap.last_seq);
        let same_session = log.first().is_some_and(|r| r.session == snap.state.id);
        (covered && same_session && snap.state.last_seq == snap.last_seq).then_some(snap.state)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServerError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Replays every session directory. Failures are quarantined, not fatal.
pub fn load_all(data_dir: &Path) -> Result<(Vec<Loaded>, Vec<Quarantined>), ServerError> {
    let root = sessions_root(data_dir);
    fs::create_dir_all(&root)?;
    let mut entries: Vec<PathBuf> = fs::read_dir(&root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut loaded = Vec::new();
    let mut bad = Vec::new();
    for path in entries {
        let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match SessionDir::load(path.clone()) {
            Ok(l) => loaded.push(l),
            Err(e) => {
                let (seq, message) = match e {
                    GameError::CorruptLog { seq, message } => (seq, message),
                    other => (0, other.to_string()),
                };
                tracing::warn!(session = %id, seq, %message, "quarantining session");
                let target = data_dir.join("quarantine").join(&id);
                fs::create_dir_all(data_dir.join("quarantine"))?;
                if target.exists() {
                    fs::remove_dir_all(&target)?;
                }
                fs::rename(&path, &target)?;
                bad.push(Quarantined { id, seq, message });
            }
        }
    }
    Ok((loaded, bad))
}
