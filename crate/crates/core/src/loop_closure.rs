//! Revisit detection over a room database, merge-and-reconstruct of the
//! matched pair, and all-or-nothing rewiring of the graph.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use crate::edges::{estimate_transition_edge, EdgeError};
use crate::embedding::Embedding;
use crate::reconstruction::{ReconstructionError, ReconstructionProvider, RoomReconstruction};
use crate::scene_graph::{EdgeKind, FrameId, GraphError, RoomEdge, RoomId, RoomNode, SceneGraph, TransitionPair};
use crate::segmenter::{subsample_with_pins, FrameRecord, SegmentError};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LoopClosureConfig {
    /// Cosine similarity a feature pair needs to count as a match.
    pub tau_s: f64,
    /// A stored room qualifies with strictly more matched pairs than this.
    pub tau_r: usize,
}

impl Default for LoopClosureConfig {
    fn default() -> Self {
        Self { tau_s: 0.85, tau_r: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopClosureError {
    #[error("cannot merge room {0} with itself")]
    SameRoom(RoomId),
    #[error("room {0} is not finalized")]
    NotFinalized(RoomId),
    #[error("frame {0} is missing from the frame store")]
    MissingFrame(FrameId),
    #[error("merged batch could not be reconstructed: {0}")]
    Reconstruction(#[from] ReconstructionError),
    #[error(transparent)]
    Subsample(#[from] SegmentError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("merged reconstruction lost frame {0} shared with the original room")]
    LostFrame(FrameId),
}

/// A database hit: room id and number of matched feature pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoopMatch {
    pub room: RoomId,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoomDatabase {
    entries: BTreeMap<RoomId, Vec<Embedding>>,
    config: LoopClosureConfig,
}

/// Cross pairs with cosine at or above `tau_s`.
pub fn count_matches(a: &[Embedding], b: &[Embedding], tau_s: f64) -> usize {
    a.iter()
        .map(|fa| b.iter().filter(|fb| fa.cosine(fb) >= tau_s).count())
        .sum()
}

impl RoomDatabase {
    pub fn new(config: LoopClosureConfig) -> Self {
        Self {
            entries: BTreeMap::new(),
            config,
        }
    }

    pub fn config(&self) -> &LoopClosureConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, room: RoomId) -> bool {
        self.entries.contains_key(&room)
    }

    pub fn rooms(&self) -> impl Iterator<Item = RoomId> + '_ {
        self.entries.keys().copied()
    }

    pub fn insert(&mut self, room: RoomId, features: Vec<Embedding>) {
        self.entries.insert(room, features);
    }

    pub fn remove(&mut self, room: RoomId) -> Option<Vec<Embedding>> {
        self.entries.remove(&room)
    }

    /// Best qualifying stored room: highest count, ties to the lower id.
    pub fn query(&self, features: &[Embedding]) -> Option<LoopMatch> {
        let mut best: Option<LoopMatch> = None;
        for (&room, stored) in &self.entries {
            let count = count_matches(features, stored, self.config.tau_s);
            if count > self.config.tau_r && best.is_none_or(|b| count > b.count) {
                best = Some(LoopMatch { room, count });
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeConfig {
    /// Target keyframe count of the merged batch before pinned frames.
    pub batch_size: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { batch_size: 60 }
    }
}

/// A proposed merge, not yet applied.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeCandidate {
    /// `(stored room, new room)`.
    pub original_rooms: (RoomId, RoomId),
    pub merged_node: RoomNode,
    pub reconstruction: RoomReconstruction,
    /// Edges from the merged room (under its future id) to each neighbour.
    pub reverified_edges: Vec<RoomEdge>,
    /// Neighbours whose edge could not be re-estimated.
    pub failed_neighbors: Vec<RoomId>,
}

/// Reconstructs the union of two rooms' keyframes and re-estimates one edge
/// to every neighbour of either room, reusing the frame pairs of the old
/// edges. The graph is not modified.
pub fn merge_rooms<P: ReconstructionProvider + ?Sized>(
    graph: &SceneGraph,
    stored: RoomId,
    new: RoomId,
    provider: &P,
    frames: &BTreeMap<FrameId, FrameRecord>,
    config: &MergeConfig,
) -> Result<MergeCandidate, LoopClosureError> {
    if stored == new {
        return Err(LoopClosureError::SameRoom(stored));
    }
    let (ri, rj) = (graph.room(stored)?, graph.room(new)?);
    for (id, r) in [(stored, ri), (new, rj)] {
        if !r.finalized {
            return Err(LoopClosureError::NotFinalized(id));
        }
    }
    let originals = [stored, new];

    // Neighbour -> pairs oriented (merged side, neighbour side), and kinds.
    let mut by_neighbor: BTreeMap<RoomId, (BTreeSet<TransitionPair>, bool)> = BTreeMap::new();
    for &r in &originals {
        for (_, e) in graph.edges_of(r) {
            let Some(k) = e.other(r) else { continue };
            if originals.contains(&k) {
                continue;
            }
            let entry = by_neighbor.entry(k).or_insert_with(|| (BTreeSet::new(), true));
            for p in &e.pairs {
                entry.0.insert(if e.from == r { *p } else { p.reversed() });
            }
            entry.1 &= e.kind == EdgeKind::Transition;
        }
    }

    let union: Vec<FrameId> = ri
        .keyframes()
        .chain(rj.keyframes())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pinned_ids: BTreeSet<FrameId> = by_neighbor
        .values()
        .flat_map(|(pairs, _)| pairs.iter().map(|p| p.frame_p))
        .collect();
    let pins: BTreeSet<usize> = union
        .iter()
        .enumerate()
        .filter(|(_, f)| pinned_ids.contains(f))
        .map(|(i, _)| i)
        .collect();
    let batch: Vec<FrameRecord> = subsample_with_pins(union.len(), config.batch_size, &pins)?
        .into_iter()
        .map(|i| {
            frames
                .get(&union[i])
                .cloned()
                .ok_or(LoopClosureError::MissingFrame(union[i]))
        })
        .collect::<Result<_, _>>()?;

    let reconstruction = provider.reconstruct_batch(&batch)?;

    // Place the merged frame so a frame common to the stored room keeps its
    // world pose: T_merged = T_i * L_i(p) * L_merged(p)^-1.
    let common = reconstruction
        .frame_poses
        .keys()
        .copied()
        .find(|f| ri.contains_frame(*f))
        .ok_or(LoopClosureError::LostFrame(ri.anchor))?;
    let reference_pose =
        ri.reference_pose * ri.local_frame_poses[&common] * reconstruction.frame_poses[&common].inverse();

    let merged_node = RoomNode {
        reference_pose,
        anchor: reconstruction.anchor,
        local_frame_poses: reconstruction.frame_poses.clone(),
        point_cloud: reconstruction.points.clone(),
        frame_features: ri.frame_features.iter().chain(&rj.frame_features).cloned().collect(),
        finalized: true,
    };

    let merged_id = graph.next_room_id();
    let mut reverified_edges = Vec::new();
    let mut failed_neighbors = Vec::new();
    for (k, (pairs, all_transition)) in by_neighbor {
        let kind = if all_transition {
            EdgeKind::Transition
        } else {
            EdgeKind::LoopClosure
        };
        let pairs: Vec<TransitionPair> = pairs.into_iter().collect();
        match estimate_transition_edge((merged_id, &merged_node), (k, graph.room(k)?), &pairs, provider, kind) {
            Ok(edge) => reverified_edges.push(edge),
            Err(EdgeError::Provider(e)) => return Err(e.into()),
            Err(_) => failed_neighbors.push(k),
        }
    }

    Ok(MergeCandidate {
        original_rooms: (stored, new),
        merged_node,
        reconstruction,
        reverified_edges,
        failed_neighbors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeOutcome {
    Accepted(RoomId),
    Rejected,
}

impl MergeOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, MergeOutcome::Accepted(_))
    }
}

/// Applies the candidate only if every neighbour edge was re-estimated.
/// On acceptance both originals leave the graph and the database and the
/// merged room takes their place; otherwise the graph is untouched and the
/// new room enters the database as it is.
pub fn verify_and_apply(
    graph: &mut SceneGraph,
    db: &mut RoomDatabase,
    candidate: MergeCandidate,
) -> Result<MergeOutcome, GraphError> {
    let (stored, new) = candidate.original_rooms;
    if !candidate.failed_neighbors.is_empty() {
        let features = graph.room(new)?.frame_features.clone();
        db.insert(new, features);
        return Ok(MergeOutcome::Rejected);
    }
    let planned = graph.next_room_id();
    let features = candidate.merged_node.frame_features.clone();
    let edges = candidate.reverified_edges;
    let id = graph.replace_rooms(&[stored, new], candidate.merged_node, |actual| {
        edges
            .into_iter()
            .map(|mut e| {
                if e.from == planned {
                    e.from = actual;
                }
                e
            })
            .collect()
    })?;
    db.remove(stored);
    db.remove(new);
    db.insert(id, features);
    Ok(MergeOutcome::Accepted(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edges::select_transition_pairs;
    use crate::geometry::{chamfer_distance, ChamferOptions, PointCloud, Sim3};
    use crate::reconstruction::{OracleNoiseModel, OracleProvider, RelativePoseEstimate};
    use crate::simulator::{generate_sequence, generate_world, Sequence, SequenceSpec, World, WorldConfig};
    use alloc::vec;

    fn unit(v: &[f64]) -> Embedding {
        Embedding::normalized(v).unwrap()
    }

    #[test]
    fn empty_database_matches_nothing() {
        let db = RoomDatabase::new(LoopClosureConfig::default());
        assert_eq!(db.query(&[unit(&[1.0, 0.0])]), None);
    }

    #[test]
    fn identical_rooms_match_with_all_pairs() {
        let config = LoopClosureConfig { tau_s: 0.9, tau_r: 3 };
        let mut db = RoomDatabase::new(config);
        let feats: Vec<Embedding> = (0..10).map(|i| unit(&[1.0, 0.001 * i as f64])).collect();
        db.insert(RoomId(4), feats.clone());
        assert_eq!(
            db.query(&feats),
            Some(LoopMatch {
                room: RoomId(4),
                count: 100
            })
        );
        db.insert(RoomId(2), feats.clone());
        assert_eq!(db.query(&feats).unwrap().room, RoomId(2));
    }

    #[test]
    fn orthogonal_rooms_do_not_match() {
        let mut db = RoomDatabase::new(LoopClosureConfig { tau_s: 0.5, tau_r: 0 });
        db.insert(RoomId(0), vec![unit(&[1.0, 0.0, 0.0]); 20]);
        assert_eq!(db.query(&vec![unit(&[0.0, 1.0, 0.0]); 20]), None);
    }

    #[test]
    fn pair_counting_is_symmetric() {
        let a: Vec<Embedding> = (0..7).map(|i| unit(&[1.0, i as f64 * 0.1, 0.3])).collect();
        let b: Vec<Embedding> = (0..5).map(|i| unit(&[1.0, 0.2, i as f64 * 0.2])).collect();
        for tau in [0.8, 0.9, 0.95, 0.99] {
            assert_eq!(count_matches(&a, &b, tau), count_matches(&b, &a, tau));
        }
    }

    struct Fixture {
        world: World,
        seq: Sequence,
    }

    fn fixture(order: &[u32]) -> Fixture {
        let world = generate_world(&WorldConfig::default(), 41).unwrap();
        let spec = SequenceSpec {
            visit_order: order.to_vec(),
            tracklets: false,
            ..Default::default()
        };
        let seq = generate_sequence(&world, &spec).unwrap();
        Fixture { world, seq }
    }

    /// One room per visit; consecutive rooms share five connector frames and
    /// are joined by a transition edge. Reference poses are ground truth.
    fn build_graph<P: ReconstructionProvider>(f: &Fixture, oracle: &OracleProvider<'_>, provider: &P) -> SceneGraph {
        let mut g = SceneGraph::new();
        let n = f.seq.visits.len();
        let mut prev: Option<RoomId> = None;
        for (k, v) in f.seq.visits.iter().enumerate() {
            let start = if k == 0 { 0 } else { v.start - 6 - 5 };
            let end = if k + 1 == n { v.end } else { v.end + 6 };
            let frames = &f.seq.frames[start..end];
            let ids: Vec<FrameId> = frames.iter().map(|x| x.id).collect();
            let rec = oracle.reconstruct_batch(frames).unwrap();
            let node = RoomNode {
                reference_pose: oracle.reference_pose(&ids).unwrap(),
                anchor: rec.anchor,
                local_frame_poses: rec.frame_poses,
                point_cloud: rec.points,
                frame_features: f.seq.frames[v.start..v.end].iter().map(|x| x.feature.clone()).collect(),
                finalized: true,
            };
            let id = g.add_room(node);
            if let Some(p) = prev {
                let pairs = select_transition_pairs((p, g.room(p).unwrap()), (id, g.room(id).unwrap()), 3).unwrap();
                let e = estimate_transition_edge(
                    (p, g.room(p).unwrap()),
                    (id, g.room(id).unwrap()),
                    &pairs,
                    provider,
                    EdgeKind::Transition,
                )
                .unwrap();
                g.add_room_edge(e).unwrap();
            }
            prev = Some(id);
        }
        g
    }

    fn store(seq: &Sequence) -> BTreeMap<FrameId, FrameRecord> {
        seq.frames.iter().map(|f| (f.id, f.clone())).collect()
    }

    #[test]
    fn revisit_is_detected_and_merged() {
        let f = fixture(&[0, 1, 2, 0]);
        let oracle = OracleProvider::new(&f.world, &f.seq.frames, OracleNoiseModel::noiseless())
            .unwrap()
            .with_views(false);
        let mut g = build_graph(&f, &oracle, &oracle);
        let mut db = RoomDatabase::new(LoopClosureConfig::default());
        for r in [RoomId(0), RoomId(1), RoomId(2)] {
            db.insert(r, g.room(r).unwrap().frame_features.clone());
        }
        let hit = db.query(&g.room(RoomId(3)).unwrap().frame_features).unwrap();
        assert_eq!(hit.room, RoomId(0));

        let candidate = merge_rooms(
            &g,
            RoomId(0),
            RoomId(3),
            &oracle,
            &store(&f.seq),
            &MergeConfig::default(),
        )
        .unwrap();
        assert_eq!(candidate.reverified_edges.len(), 2);
        assert!(candidate.failed_neighbors.is_empty());

        // The merged cloud is at least as complete as either original.
        let gt = PointCloud::new(f.world.room_surface(0)).unwrap();
        let world_cloud = |node: &RoomNode| node.point_cloud.transformed(&node.reference_pose);
        let merged_c = chamfer_distance(&world_cloud(&candidate.merged_node), &gt, ChamferOptions::default()).unwrap();
        for r in [RoomId(0), RoomId(3)] {
            let c = chamfer_distance(&world_cloud(g.room(r).unwrap()), &gt, ChamferOptions::default()).unwrap();
            assert!(merged_c <= c + 1e-12, "{merged_c} vs {c}");
        }

        let outcome = verify_and_apply(&mut g, &mut db, candidate).unwrap();
        let MergeOutcome::Accepted(m) = outcome else {
            panic!("merge rejected")
        };
        assert_eq!(g.rooms().len(), 3);
        g.check_integrity().unwrap();
        for e in g.room_edges().values() {
            for r in [RoomId(0), RoomId(3)] {
                assert!(!e.connects(r));
            }
        }
        assert_eq!(g.edges_of(m).count(), 2);
        assert!(!db.contains(RoomId(0)) && !db.contains(RoomId(3)) && db.contains(m));
    }

    struct BrokenEdges<'a> {
        inner: &'a OracleProvider<'a>,
        broken: BTreeSet<FrameId>,
    }

    impl ReconstructionProvider for BrokenEdges<'_> {
        fn reconstruct_batch(&self, f: &[FrameRecord]) -> Result<RoomReconstruction, ReconstructionError> {
            self.inner.reconstruct_batch(f)
        }
        fn relative_pose(&self, p: FrameId, q: FrameId) -> Result<RelativePoseEstimate, ReconstructionError> {
            if self.broken.contains(&p) || self.broken.contains(&q) {
                Ok(RelativePoseEstimate::invalid())
            } else {
                self.inner.relative_pose(p, q)
            }
        }
    }

    #[test]
    fn failed_reverification_leaves_graph_untouched() {
        let f = fixture(&[0, 1, 2, 0]);
        let oracle = OracleProvider::new(&f.world, &f.seq.frames, OracleNoiseModel::noiseless())
            .unwrap()
            .with_views(false);
        let mut g = build_graph(&f, &oracle, &oracle);
        // Break every frame of the 2 -> 3 transition.
        let e = g.edges_of(RoomId(3)).next().unwrap().1.clone();
        let broken = e.pairs.iter().flat_map(|p| [p.frame_p, p.frame_q]).collect();
        let faulty = BrokenEdges { inner: &oracle, broken };
        let mut db = RoomDatabase::new(LoopClosureConfig::default());
        db.insert(RoomId(0), g.room(RoomId(0)).unwrap().frame_features.clone());
        let snapshot = (g.clone(), db.clone());

        let candidate = merge_rooms(
            &g,
            RoomId(0),
            RoomId(3),
            &faulty,
            &store(&f.seq),
            &MergeConfig::default(),
        )
        .unwrap();
        assert_eq!(candidate.failed_neighbors, vec![RoomId(2)]);
        assert_eq!(
            verify_and_apply(&mut g, &mut db, candidate).unwrap(),
            MergeOutcome::Rejected
        );
        assert_eq!(g, snapshot.0);
        assert!(db.contains(RoomId(3)));
        db.remove(RoomId(3));
        assert_eq!(db, snapshot.1);
    }

    struct NoReconstruction<'a>(&'a OracleProvider<'a>);

    impl ReconstructionProvider for NoReconstruction<'_> {
        fn reconstruct_batch(&self, _: &[FrameRecord]) -> Result<RoomReconstruction, ReconstructionError> {
            Err(ReconstructionError::Failed("injected".into()))
        }
        fn relative_pose(&self, p: FrameId, q: FrameId) -> Result<RelativePoseEstimate, ReconstructionError> {
            self.0.relative_pose(p, q)
        }
    }

    #[test]
    fn provider_failure_aborts_merge() {
        let f = fixture(&[0, 1, 0]);
        let oracle = OracleProvider::new(&f.world, &f.seq.frames, OracleNoiseModel::noiseless())
            .unwrap()
            .with_views(false);
        let g = build_graph(&f, &oracle, &oracle);
        let before = g.clone();
        let err = merge_rooms(
            &g,
            RoomId(0),
            RoomId(2),
            &NoReconstruction(&oracle),
            &store(&f.seq),
            &MergeConfig::default(),
        );
        assert!(matches!(err, Err(LoopClosureError::Reconstruction(_))));
        assert_eq!(g, before);
    }

    #[test]
    fn isolated_rooms_merge_vacuously() {
        let f = fixture(&[0, 1, 0]);
        let oracle = OracleProvider::new(&f.world, &f.seq.frames, OracleNoiseModel::noiseless())
            .unwrap()
            .with_views(false);
        let mut g = build_graph(&f, &oracle, &oracle);
        let ids: Vec<_> = g.room_edges().keys().copied().collect();
        for id in ids {
            g.remove_room_edge(id).unwrap();
        }
        let candidate = merge_rooms(
            &g,
            RoomId(0),
            RoomId(2),
            &oracle,
            &store(&f.seq),
            &MergeConfig::default(),
        )
        .unwrap();
        assert!(candidate.reverified_edges.is_empty());
        let mut db = RoomDatabase::default();
        assert!(verify_and_apply(&mut g, &mut db, candidate).unwrap().accepted());
        assert_eq!(g.rooms().len(), 2);
        let _ = Sim3::identity();
    }
}
