//! World snapshots taken at epoch boundaries.
//!
//! A snapshot file holds two lines: a small header, then the payload it
//! checksums. The payload carries the scenario next to the world state so a
//! resume can check it is continuing the same run.

use std::path::Path;

use hiershare::simnet::state::WorldState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ScenarioConfig;

pub const SNAPSHOT_FORMAT: &str = "hiershare-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("snapshot version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot was not taken at an epoch boundary (tick {tick})")]
    MidEpoch { tick: u64 },
    #[error("snapshot has redacted secrets and cannot be resumed")]
    Redacted,
    #[error("snapshot belongs to a different scenario: {0}")]
    ScenarioMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    /// Hex SHA-256 of the payload line.
    checksum: String,
    redacted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub scenario: ScenarioConfig,
    pub state: WorldState,
}

fn checksum(payload: &str) -> String {
    hex::encode(Sha256::digest(payload.as_bytes()))
}

impl Snapshot {
    pub fn to_text(&self) -> String {
        let payload = serde_json::to_string(self).expect("snapshot serializes");
        let header = Header {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            checksum: checksum(&payload),
            redacted: self.state.redacted,
        };
        let header = serde_json::to_string(&header).expect("header serializes");
        format!("{header}\n{payload}\n")
    }

    pub fn from_text(text: &str) -> Result<Self, SnapshotError> {
        let corrupt = |m: String| SnapshotError::CorruptSnapshot(m);
        let (header_line, rest) = text
            .split_once('\n')
            .ok_or_else(|| corrupt("missing payload".into()))?;
        let header: Header =
            serde_json::from_str(header_line).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(corrupt(format!("unknown format {:?}", header.format)));
        }
        if header.version != SNAPSHOT_VERSION {
            return Err(SnapshotError::VersionMismatch {
                found: header.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let payload = rest.strip_suffix('\n').unwrap_or(rest);
        if checksum(payload) != header.checksum {
            return Err(corrupt("checksum does not match the payload".into()));
        }
        let snapshot: Snapshot =
            serde_json::from_str(payload).map_err(|e| corrupt(format!("payload: {e}")))?;
        if snapshot.state.redacted != header.redacted {
            return Err(corrupt("header and payload disagree on redaction".into()));
        }
        Ok(snapshot)
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        std::fs::write(path, self.to_text()).map_err(|source| SnapshotError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        let text = std::fs::read_to_string(path).map_err(|source| SnapshotError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Refuses states that cannot continue: redacted ones and ones caught
    /// between epochs.
    pub fn check_resumable(&self) -> Result<(), SnapshotError> {
        if self.state.redacted {
            return Err(SnapshotError::Redacted);
        }
        let clock = &self.state.clock;
        let boundary = if self.state.next_epoch == 0 {
            clock.global == 0 && clock.tick == 0
        } else {
            clock.global + 1 == self.state.next_epoch
                && clock.tick == clock.global * clock.ticks_per_epoch + clock.ticks_per_epoch - 1
        };
        if boundary {
            Ok(())
        } else {
            Err(SnapshotError::MidEpoch { tick: clock.tick })
        }
    }
}
