//! Authoritative session state, its change vocabulary, and the convergence digest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::CellId;
use crate::protocol::wire::ClientId;
use crate::{sha256_hex, DataCube, Pose, Projection2D, SelectionState, SummaryStats};

/// Identity of the update that last set the proxy pose. Ordered `(seq, client)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoseWriter {
    pub seq: u64,
    pub client: ClientId,
}

/// Everything the hub owns for one session.
///
/// The replicated part (cube digest, selection, pose and its writer, projection, summary) is
/// what clients mirror and what [`SessionState::digest`] covers. `watermarks` and
/// `outbound_seq` are the hub's delivery bookkeeping; they travel in snapshots but are not
/// part of the digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub cube_digest: String,
    pub selection: SelectionState,
    pub pose: Pose,
    pub pose_writer: Option<PoseWriter>,
    pub projection: Option<Projection2D>,
    pub summary: Option<SummaryStats>,
    /// Highest applied `seq` per client.
    pub watermarks: BTreeMap<ClientId, u64>,
    /// Last `seq` the hub stamped on an outbound envelope.
    pub outbound_seq: u64,
}

#[derive(Serialize)]
struct ReplicatedView<'a> {
    format: &'static str,
    cube_digest: &'a str,
    selection: &'a SelectionState,
    pose: &'a Pose,
    pose_writer: &'a Option<PoseWriter>,
    projection: &'a Option<Projection2D>,
    summary: &'a Option<SummaryStats>,
}

impl SessionState {
    /// Empty selection, identity pose, no projection or summary.
    pub fn initial(cube: &DataCube) -> Self {
        Self::for_digest(cube.digest())
    }

    pub fn for_digest(cube_digest: String) -> Self {
        Self {
            cube_digest,
            selection: SelectionState::default(),
            pose: Pose::identity(),
            pose_writer: None,
            projection: None,
            summary: None,
            watermarks: BTreeMap::new(),
            outbound_seq: 0,
        }
    }

    pub fn watermark(&self, client: &ClientId) -> u64 {
        self.watermarks.get(client).copied().unwrap_or(0)
    }

    /// Canonical serialization of the replicated state: one JSON line, fixed field order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let view = ReplicatedView {
            format: "holoproxy-state/1",
            cube_digest: &self.cube_digest,
            selection: &self.selection,
            pose: &self.pose,
            pose_writer: &self.pose_writer,
            projection: &self.projection,
            summary: &self.summary,
        };
        let mut out = serde_json::to_vec(&view).expect("state serialization is infallible");
        out.push(b'\n');
        out
    }

    /// SHA-256 of [`Self::canonical_bytes`] as 64 lowercase hex characters.
    pub fn digest(&self) -> String {
        sha256_hex(&self.canonical_bytes())
    }

    /// Applies a hub-issued change list to a replica.
    pub fn apply(&mut self, changes: &[Change]) {
        for change in changes {
            match change {
                Change::Select { cell } => {
                    self.selection.selected.insert(*cell);
                }
                Change::Deselect { cell } => {
                    self.selection.selected.remove(cell);
                }
                Change::Pose { pose, writer } => {
                    self.pose = *pose;
                    self.pose_writer = Some(writer.clone());
                }
                Change::Projection { projection } => self.projection = projection.clone(),
                Change::Summary { summary } => self.summary = *summary,
            }
        }
    }

    pub(crate) fn validate_values(&self) -> Result<(), String> {
        self.pose.validate().map_err(|e| e.to_string())
    }
}

/// One replicated state change, as carried in `StateDelta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Change {
    Select { cell: CellId },
    Deselect { cell: CellId },
    Pose { pose: Pose, writer: PoseWriter },
    Projection { projection: Option<Projection2D> },
    Summary { summary: Option<SummaryStats> },
}

impl Change {
    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            Change::Pose { pose, .. } => pose.validate().map_err(|e| e.to_string()),
            _ => Ok(()),
        }
    }
}

/// Selection changes turning `before` into `after`: deselects then selects, each in cell order.
pub fn selection_diff(before: &SelectionState, after: &SelectionState) -> Vec<Change> {
    let removed = before.selected.difference(&after.selected).map(|&cell| Change::Deselect { cell });
    let added = after.selected.difference(&before.selected).map(|&cell| Change::Select { cell });
    removed.chain(added).collect()
}
