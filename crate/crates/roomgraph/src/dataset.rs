//! Directory layouts shared by the subcommands.
//!
//! Input directory, as written by `simulate`:
//!
//! | file | content |
//! |------|---------|
//! | `features.bin`, `features.json` | frame stream |
//! | `cues.json` | transition and room cue embeddings |
//! | `groundtruth.txt` | TUM ground-truth trajectory |
//! | `gt_cloud.ply` | room-labelled ground-truth surfaces |
//! | `tracklets.json` | mask tracklets |
//! | `world.json`, `sequence.json` | simulator metadata |
//! | `replay/` | optional precomputed reconstructions |
//!
//! Run directory, as written by `run`: `scene_graph.json` with its PLY
//! files, `trajectory.txt`, `run.json` and, after `eval`, `report.json`.

use std::collections::BTreeMap;
use std::path::Path;

use roomgraph_core::geometry::{PointCloud, Trajectory};
use roomgraph_core::objects::MaskTracklet;
use roomgraph_core::pipeline::{BatchSummary, PipelineOutput};
use roomgraph_core::scene_graph::{FrameId, RoomId};
use roomgraph_core::segmenter::{CueSet, FrameRecord};
use roomgraph_core::simulator::{Camera, Sequence, SequenceSpec, World};
use serde::{Deserialize, Serialize};

use crate::io::features::{self, FeatureRow};
use crate::io::world::{SequenceDoc, VisitDoc, WorldDoc};
use crate::io::{ply, read_json, tracklets, tum, write_json, IoError};

pub const FEATURES_BIN: &str = "features.bin";
pub const FEATURES_JSON: &str = "features.json";
pub const CUES: &str = "cues.json";
pub const GT_TRAJECTORY: &str = "groundtruth.txt";
pub const GT_CLOUD: &str = "gt_cloud.ply";
pub const TRACKLETS: &str = "tracklets.json";
pub const WORLD: &str = "world.json";
pub const SEQUENCE: &str = "sequence.json";
pub const REPLAY_DIR: &str = "replay";
pub const CONFIG_COPY: &str = "config.json";

pub const TRAJECTORY: &str = "trajectory.txt";
pub const RUN_SUMMARY: &str = "run.json";
pub const REPORT: &str = "report.json";
pub const EXPORT_DIR: &str = "export";

/// Writes a simulated world and sequence as an input directory.
pub fn write_simulation(dir: &Path, world: &World, spec: &SequenceSpec, seq: &Sequence) -> Result<(), IoError> {
    let rows: Vec<FeatureRow> = seq
        .frames
        .iter()
        .map(|f| FeatureRow {
            id: f.id,
            timestamp: f.timestamp,
            feature: f.feature.clone(),
        })
        .collect();
    features::write(&dir.join(FEATURES_BIN), &dir.join(FEATURES_JSON), &rows)?;
    write_json(&dir.join(CUES), &seq.cues)?;
    tum::write_trajectory(&dir.join(GT_TRAJECTORY), &seq.ground_truth)?;
    ply::write(&dir.join(GT_CLOUD), &world.ground_truth_cloud())?;
    let camera = Camera::default();
    tracklets::write(&dir.join(TRACKLETS), camera.width, camera.height, &seq.tracklets)?;
    write_json(&dir.join(WORLD), &WorldDoc::describe(world))?;
    let doc = SequenceDoc {
        spec: spec.clone(),
        visits: seq.visits.iter().map(VisitDoc::from).collect(),
        gt_rooms: seq.frames.iter().map(|f| f.gt_room).collect(),
    };
    write_json(&dir.join(SEQUENCE), &doc)
}

/// Everything `run` reads from an input directory.
pub struct Input {
    pub frames: Vec<FrameRecord>,
    pub cues: CueSet,
    pub tracklets: Vec<MaskTracklet>,
}

/// Loads the frame stream. Ground-truth poses and rooms are attached when
/// `groundtruth.txt` and `sequence.json` are present; tracklets are
/// optional.
pub fn load_input(dir: &Path) -> Result<Input, IoError> {
    let rows = features::read(&dir.join(FEATURES_BIN), &dir.join(FEATURES_JSON))?;
    let cues: CueSet = read_json(&dir.join(CUES))?;
    let gt = if dir.join(GT_TRAJECTORY).exists() {
        Some(tum::read_trajectory(&dir.join(GT_TRAJECTORY))?)
    } else {
        None
    };
    let gt_rooms: Option<Vec<Option<u32>>> = if dir.join(SEQUENCE).exists() {
        let doc: SequenceDoc = read_json(&dir.join(SEQUENCE))?;
        if doc.gt_rooms.len() != rows.len() {
            return Err(IoError::invalid(
                &dir.join(SEQUENCE),
                "gt_rooms length differs from the frame count",
            ));
        }
        Some(doc.gt_rooms)
    } else {
        None
    };
    let frames = rows
        .into_iter()
        .enumerate()
        .map(|(k, r)| FrameRecord {
            id: r.id,
            timestamp: r.timestamp,
            gt_pose: gt
                .as_ref()
                .and_then(|t| t.nearest(r.timestamp, 1e-6).map(|i| t.poses()[i].1)),
            gt_room: gt_rooms.as_ref().and_then(|g| g[k]),
            feature: r.feature,
        })
        .collect();
    let tracklets = if dir.join(TRACKLETS).exists() {
        tracklets::read(&dir.join(TRACKLETS))?
    } else {
        Vec::new()
    };
    Ok(Input {
        frames,
        cues,
        tracklets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptSummary {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub factors: usize,
    pub anchors: Vec<RoomId>,
}

/// Run metadata that does not belong in the scene graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub provider: String,
    pub invalid_rooms: Vec<RoomId>,
    pub batches: Vec<BatchSummary>,
    pub stage_timings: BTreeMap<String, f64>,
    pub loop_closures_accepted: usize,
    pub loop_closures_rejected: usize,
    pub optimization: Option<OptSummary>,
    pub errors: Vec<String>,
    pub trajectory_frames: Vec<FrameId>,
}

impl RunSummary {
    pub fn new(provider: &str, out: &PipelineOutput) -> Self {
        Self {
            provider: provider.into(),
            invalid_rooms: out.invalid_rooms.clone(),
            batches: out.batches.clone(),
            stage_timings: out.stage_timings.clone(),
            loop_closures_accepted: out.loop_closures_accepted,
            loop_closures_rejected: out.loop_closures_rejected,
            optimization: out.optimization.as_ref().map(|r| OptSummary {
                iterations: r.iterations,
                initial_cost: r.initial_cost,
                final_cost: r.final_cost,
                converged: r.converged,
                factors: r.factors,
                anchors: r.anchors.clone(),
            }),
            errors: out.errors.clone(),
            trajectory_frames: out.trajectory_frames.clone(),
        }
    }
}

/// Ground truth found in a directory; missing files leave fields empty.
pub struct GroundTruthFiles {
    pub trajectory: Option<Trajectory>,
    pub cloud: Option<PointCloud>,
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruthFiles, IoError> {
    let trajectory = match dir.join(GT_TRAJECTORY) {
        p if p.exists() => Some(tum::read_trajectory(&p)?),
        _ => None,
    };
    let cloud = match dir.join(GT_CLOUD) {
        p if p.exists() => Some(ply::read(&p)?),
        _ => None,
    };
    Ok(GroundTruthFiles { trajectory, cloud })
}
