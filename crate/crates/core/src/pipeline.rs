//! End-to-end driver: segment, reconstruct, link, loop-close, populate
//! objects and optimize.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::edges::{estimate_transition_edge, select_transition_pairs};
use crate::geometry::{GeometryError, Sim3, Trajectory};
use crate::loop_closure::{merge_rooms, verify_and_apply, LoopClosureConfig, MergeConfig, MergeOutcome, RoomDatabase};
use crate::objects::{populate_room, MaskTracklet, ObjectConfig};
use crate::pgo::{optimize, OptReport, PgoConfig};
use crate::reconstruction::{ReconstructionError, ReconstructionProvider, RoomReconstruction};
use crate::scene_graph::{EdgeKind, FrameId, GraphError, RoomId, RoomNode, SceneGraph};
use crate::segmenter::{
    subsample_indices, subsample_with_pins, CueSet, FinalizedBatch, FrameRecord, HysteresisConfig, SegmentError,
    Segmenter,
};

/// Stage names used as keys of [`PipelineOutput::stage_timings`].
pub mod stage {
    pub const SEGMENTATION: &str = "segmentation";
    pub const RECONSTRUCTION: &str = "reconstruction";
    pub const EDGES: &str = "edges";
    pub const LOOP_CLOSURE: &str = "loop_closure";
    pub const OBJECTS: &str = "objects";
    pub const OPTIMIZATION: &str = "optimization";
    pub const TOTAL: &str = "total";
}

/// Monotonic time source in seconds. The core crate has no clock of its
/// own; callers without one get zero timings from [`NoClock`].
pub trait Clock {
    fn now(&self) -> f64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BatchingMode {
    /// Batches close on detected room transitions.
    #[default]
    RoomBased,
    /// Fixed windows of `batch_size` frames sharing `overlap_count` frames.
    SlidingWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StageFlags {
    pub loop_closure: bool,
    pub objects: bool,
    pub optimization: bool,
    /// Also optimize right after every accepted loop closure.
    pub optimize_after_loop_closure: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            loop_closure: true,
            objects: true,
            optimization: true,
            optimize_after_loop_closure: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    pub mode: BatchingMode,
    /// Keyframes per reconstruction request, before pinned frames.
    pub batch_size: usize,
    /// Frame pairs per side used for transition edges.
    pub transition_pairs: usize,
    /// Retry a failed reconstruction once with a different subsample.
    pub retry_failed_batches: bool,
    pub stages: StageFlags,
    pub segmenter: HysteresisConfig,
    pub loop_closure: LoopClosureConfig,
    pub pgo: PgoConfig,
    pub objects: ObjectConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: BatchingMode::RoomBased,
            batch_size: 60,
            transition_pairs: 3,
            retry_failed_batches: true,
            stages: StageFlags::default(),
            segmenter: HysteresisConfig::default(),
            loop_closure: LoopClosureConfig::default(),
            pgo: PgoConfig::default(),
            objects: ObjectConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.segmenter.validate()?;
        if self.batch_size < 2 {
            return Err(PipelineError::Config("batch_size must be at least 2"));
        }
        if self.transition_pairs == 0 {
            return Err(PipelineError::Config("transition_pairs must be positive"));
        }
        if self.mode == BatchingMode::SlidingWindow && self.segmenter.overlap_count >= self.batch_size {
            return Err(PipelineError::Config("overlap_count must be below batch_size"));
        }
        if !(0.0..=1.0).contains(&self.loop_closure.tau_s) {
            return Err(PipelineError::Config("loop_closure.tau_s must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// What happened to one closed batch.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchSummary {
    /// Room created for the batch, or the id reserved for it on failure.
    pub room: RoomId,
    pub first_frame: FrameId,
    pub last_frame: FrameId,
    pub frames: usize,
    pub keyframes: usize,
    pub forced: bool,
    pub valid: bool,
    /// Room the batch was merged into by loop closure.
    pub merged_into: Option<RoomId>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub graph: SceneGraph,
    /// World poses of every keyframe, by timestamp.
    pub trajectory: Trajectory,
    pub trajectory_frames: Vec<FrameId>,
    pub invalid_rooms: Vec<RoomId>,
    pub batches: Vec<BatchSummary>,
    pub stage_timings: BTreeMap<String, f64>,
    pub loop_closures_accepted: usize,
    pub loop_closures_rejected: usize,
    pub optimization: Option<OptReport>,
    /// Recoverable stage failures, in the order they occurred.
    pub errors: Vec<String>,
}

/// Inputs shared by both batching modes.
#[derive(Clone, Copy)]
pub struct PipelineInput<'a> {
    pub frames: &'a [FrameRecord],
    pub cues: &'a CueSet,
    pub tracklets: &'a [MaskTracklet],
}

struct Timer<'c> {
    clock: &'c dyn Clock,
    totals: BTreeMap<String, f64>,
}

impl Timer<'_> {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = self.clock.now();
        let out = f();
        let dt = (self.clock.now() - start).max(0.0);
        *self.totals.entry(stage.to_string()).or_insert(0.0) += dt;
        out
    }
}

struct State<'a, P: ?Sized> {
    config: &'a PipelineConfig,
    provider: &'a P,
    graph: SceneGraph,
    db: RoomDatabase,
    frames: BTreeMap<FrameId, FrameRecord>,
    reconstructions: BTreeMap<RoomId, RoomReconstruction>,
    prev: Option<RoomId>,
    invalid_rooms: Vec<RoomId>,
    batches: Vec<BatchSummary>,
    accepted: usize,
    rejected: usize,
    optimization: Option<OptReport>,
    errors: Vec<String>,
}

/// Runs the configured pipeline over a complete frame stream.
pub fn run_pipeline<P: ReconstructionProvider + ?Sized>(
    input: PipelineInput<'_>,
    provider: &P,
    config: &PipelineConfig,
    clock: &dyn Clock,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let mut timer = Timer {
        clock,
        totals: BTreeMap::new(),
    };
    let start = clock.now();
    let mut state = State {
        config,
        provider,
        graph: SceneGraph::new(),
        db: RoomDatabase::new(config.loop_closure),
        frames: input.frames.iter().map(|f| (f.id, f.clone())).collect(),
        reconstructions: BTreeMap::new(),
        prev: None,
        invalid_rooms: Vec::new(),
        batches: Vec::new(),
        accepted: 0,
        rejected: 0,
        optimization: None,
        errors: Vec::new(),
    };

    match config.mode {
        BatchingMode::RoomBased => {
            let mut segmenter = Segmenter::new(config.segmenter)?;
            for frame in input.frames {
                let closed = timer.time(stage::SEGMENTATION, || segmenter.step(frame.clone(), input.cues))?;
                if let Some(batch) = closed {
                    state.process_batch(&batch, &mut timer);
                }
            }
            if let Some(batch) = segmenter.finish() {
                state.process_batch(&batch, &mut timer);
            }
        }
        BatchingMode::SlidingWindow => {
            for batch in sliding_windows(input.frames, config.batch_size, config.segmenter.overlap_count) {
                state.process_batch(&batch, &mut timer);
            }
        }
    }

    if config.stages.objects {
        timer.time(stage::OBJECTS, || state.populate_objects(input.tracklets));
    }
    if config.stages.optimization {
        timer.time(stage::OPTIMIZATION, || state.optimize());
    }
    let (trajectory, trajectory_frames) = state.trajectory()?;

    let mut stage_timings = timer.totals;
    stage_timings.insert(stage::TOTAL.into(), (clock.now() - start).max(0.0));
    state.graph.check_integrity()?;
    Ok(PipelineOutput {
        graph: state.graph,
        trajectory,
        trajectory_frames,
        invalid_rooms: state.invalid_rooms,
        batches: state.batches,
        stage_timings,
        loop_closures_accepted: state.accepted,
        loop_closures_rejected: state.rejected,
        optimization: state.optimization,
        errors: state.errors,
    })
}

/// Fixed windows over the stream; each shares `overlap` frames with the
/// next. A short tail is folded into its own window.
pub fn sliding_windows(frames: &[FrameRecord], size: usize, overlap: usize) -> Vec<FinalizedBatch> {
    let mut out = Vec::new();
    let step = size - overlap;
    let mut start = 0;
    while start < frames.len() {
        let end = (start + size).min(frames.len());
        let last = end == frames.len();
        let slice = &frames[start..end];
        out.push(FinalizedBatch {
            frames: slice.to_vec(),
            margins: alloc::vec![0.0; slice.len()],
            carried_in: if start == 0 { 0 } else { overlap.min(slice.len()) },
            carried_out: if last { 0 } else { overlap },
            forced: true,
        });
        if last {
            break;
        }
        start += step;
    }
    // A window made only of carried frames adds nothing.
    if out.len() > 1 && out.last().is_some_and(|b| b.frames.len() <= b.carried_in) {
        out.pop();
        if let Some(b) = out.last_mut() {
            b.carried_out = 0;
        }
    }
    out
}

impl<P: ReconstructionProvider + ?Sized> State<'_, P> {
    fn reconstruct(&self, batch: &FinalizedBatch) -> Result<(RoomReconstruction, usize), ReconstructionError> {
        let n = batch.frames.len();
        let pins: BTreeSet<usize> = (0..batch.carried_in).chain(n - batch.carried_out..n).collect();
        let pick = |idx: Vec<usize>| -> Vec<FrameRecord> { idx.into_iter().map(|i| batch.frames[i].clone()).collect() };
        let seg = |e: SegmentError| ReconstructionError::Failed(e.to_string());
        let first = pick(subsample_with_pins(n, self.config.batch_size, &pins).map_err(seg)?);
        match self.provider.reconstruct_batch(&first) {
            Ok(r) => Ok((r, first.len())),
            Err(e) if !self.config.retry_failed_batches || n < 3 => Err(e),
            Err(_) => {
                // A shorter stride picks a different set of interior frames.
                let target = (self.config.batch_size.min(n) - 1).max(2);
                let mut idx: BTreeSet<usize> = subsample_indices(n, target).map_err(seg)?.into_iter().collect();
                idx.extend(pins.iter().copied());
                let second = pick(idx.into_iter().collect());
                let second = if second == first {
                    // Nothing else to choose from; drop one interior frame.
                    let mut s = second;
                    if s.len() > 2 {
                        s.remove(s.len() / 2);
                    }
                    s
                } else {
                    second
                };
                self.provider.reconstruct_batch(&second).map(|r| (r, second.len()))
            }
        }
    }

    fn process_batch(&mut self, batch: &FinalizedBatch, timer: &mut Timer<'_>) {
        let (Some(first), Some(last)) = (batch.frames.first(), batch.frames.last()) else {
            return;
        };
        let mut summary = BatchSummary {
            room: self.graph.next_room_id(),
            first_frame: first.id,
            last_frame: last.id,
            frames: batch.frames.len(),
            keyframes: 0,
            forced: batch.forced,
            valid: false,
            merged_into: None,
        };

        let rec = timer.time(stage::RECONSTRUCTION, || self.reconstruct(batch));
        let (rec, keyframes) = match rec {
            Ok(r) => r,
            Err(e) => {
                let id = self.graph.next_room_id();
                self.graph.reserve_ids(id.0 + 1, 0, 0);
                self.errors.push(format!("batch {}..{} ({id}): {e}", first.id, last.id));
                self.invalid_rooms.push(id);
                self.batches.push(summary);
                return;
            }
        };
        summary.keyframes = keyframes;
        summary.valid = true;

        let features = if self.config.mode == BatchingMode::RoomBased {
            batch.interior_frames().map(|f| f.feature.clone()).collect()
        } else {
            Vec::new()
        };
        let mut node = RoomNode {
            reference_pose: Sim3::identity(),
            anchor: rec.anchor,
            local_frame_poses: rec.frame_poses.clone(),
            point_cloud: rec.points.clone(),
            frame_features: features,
            finalized: true,
        };
        let id = self.graph.next_room_id();

        let edge = timer.time(stage::EDGES, || {
            let prev = self.prev?;
            let prev_node = self.graph.room(prev).ok()?;
            let result = select_transition_pairs((prev, prev_node), (id, &node), self.config.transition_pairs)
                .and_then(|pairs| {
                    estimate_transition_edge(
                        (prev, prev_node),
                        (id, &node),
                        &pairs,
                        self.provider,
                        EdgeKind::Transition,
                    )
                });
            Some(result.map(|e| (prev_node.reference_pose, e)))
        });
        let edge = match edge {
            Some(Ok((prev_pose, e))) => {
                node.reference_pose = prev_pose * e.consensus;
                Some(e)
            }
            Some(Err(e)) => {
                self.errors.push(format!("transition edge into {id}: {e}"));
                None
            }
            None => None,
        };
        let added = self.graph.add_room(node);
        debug_assert_eq!(added, id);
        if let Some(e) = edge {
            if let Err(err) = self.graph.add_room_edge(e) {
                self.errors.push(format!("transition edge into {id}: {err}"));
            }
        }
        self.reconstructions.insert(id, rec);
        self.prev = Some(id);

        if self.config.mode == BatchingMode::RoomBased && self.config.stages.loop_closure {
            summary.merged_into = timer.time(stage::LOOP_CLOSURE, || self.loop_closure(id));
            if summary.merged_into.is_some() && self.config.stages.optimize_after_loop_closure {
                timer.time(stage::OPTIMIZATION, || self.optimize());
            }
        }
        self.batches.push(summary);
    }

    /// Queries the database with room `id`; on a verified match the two
    /// rooms are replaced by their merge, whose id is returned.
    fn loop_closure(&mut self, id: RoomId) -> Option<RoomId> {
        let features = self.graph.room(id).ok()?.frame_features.clone();
        let Some(hit) = self.db.query(&features) else {
            self.db.insert(id, features);
            return None;
        };
        let merge = MergeConfig {
            batch_size: self.config.batch_size,
        };
        let candidate = match merge_rooms(&self.graph, hit.room, id, self.provider, &self.frames, &merge) {
            Ok(c) => c,
            Err(e) => {
                self.errors.push(format!("loop closure {} <-> {id}: {e}", hit.room));
                self.rejected += 1;
                self.db.insert(id, features);
                return None;
            }
        };
        let reconstruction = candidate.reconstruction.clone();
        match verify_and_apply(&mut self.graph, &mut self.db, candidate) {
            Ok(MergeOutcome::Accepted(merged)) => {
                self.accepted += 1;
                self.reconstructions.remove(&hit.room);
                self.reconstructions.remove(&id);
                self.reconstructions.insert(merged, reconstruction);
                if self.prev == Some(id) {
                    self.prev = Some(merged);
                }
                for b in &mut self.batches {
                    if b.room == hit.room || b.merged_into == Some(hit.room) {
                        b.merged_into = Some(merged);
                    }
                }
                Some(merged)
            }
            Ok(MergeOutcome::Rejected) => {
                self.rejected += 1;
                None
            }
            Err(e) => {
                self.errors.push(format!("loop closure {} <-> {id}: {e}", hit.room));
                self.rejected += 1;
                self.db.insert(id, features);
                None
            }
        }
    }

    /// Each tracklet goes to the room holding most of its observed frames
    /// as keyframes; ties go to the lower id.
    fn populate_objects(&mut self, tracklets: &[MaskTracklet]) {
        let mut by_room: BTreeMap<RoomId, Vec<MaskTracklet>> = BTreeMap::new();
        for t in tracklets {
            let best = self
                .reconstructions
                .iter()
                .map(|(id, rec)| {
                    let n = t
                        .observations
                        .iter()
                        .filter(|o| rec.frame_poses.contains_key(&o.frame))
                        .count();
                    (*id, n)
                })
                .filter(|(_, n)| *n > 0)
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((room, _)) = best {
                by_room.entry(room).or_default().push(t.clone());
            }
        }
        for (room, ts) in by_room {
            let Some(rec) = self.reconstructions.get(&room) else {
                continue;
            };
            if let Err(e) = populate_room(&mut self.graph, room, &ts, rec, &self.config.objects) {
                self.errors.push(format!("objects in {room}: {e}"));
            }
        }
    }

    fn optimize(&mut self) {
        if self.graph.rooms().len() < 2 && self.graph.room_edges().is_empty() {
            return;
        }
        match optimize(&mut self.graph.room_pose_graph(), &self.config.pgo) {
            Ok(report) => self.optimization = Some(report),
            Err(e) => self.errors.push(format!("optimization: {e}")),
        }
    }

    /// Keyframe poses `T_r * L_r(f)`. A frame kept by several rooms takes
    /// its pose from the lowest room id.
    fn trajectory(&self) -> Result<(Trajectory, Vec<FrameId>), GeometryError> {
        let mut poses: BTreeMap<FrameId, Sim3> = BTreeMap::new();
        for room in self.graph.rooms().values() {
            for (f, local) in &room.local_frame_poses {
                poses.entry(*f).or_insert(room.reference_pose * *local);
            }
        }
        let mut stamped: Vec<(f64, FrameId, Sim3)> = poses
            .into_iter()
            .filter_map(|(f, p)| self.frames.get(&f).map(|r| (r.timestamp, f, p)))
            .collect();
        stamped.sort_by(|a, b| a.0.total_cmp(&b.0));
        stamped.dedup_by(|b, a| a.0 == b.0);
        let ids = stamped.iter().map(|s| s.1).collect();
        Ok((
            Trajectory::new(stamped.into_iter().map(|(t, _, p)| (t, p)).collect())?,
            ids,
        ))
    }
}
