//! Trajectory, reconstruction and segmentation metrics for a finished run.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{
    ate_rmse, chamfer_distance, umeyama_align, AlignmentMode, AteOptions, ChamferOptions, GeometryError, KdTree,
    PointCloud, Sim3, Trajectory,
};
use crate::math;
use crate::scene_graph::{RoomId, SceneGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{0} cloud carries no labels")]
    Unlabeled(&'static str),
    #[error("no point pairs within {radius} m; clouds do not overlap")]
    InsufficientOverlap { radius: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Chamfer entry for one room: a distance in meters or `X` when the room
/// could not be reconstructed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RoomChamfer {
    Meters(f64),
    Invalid,
}

impl RoomChamfer {
    pub fn meters(&self) -> Option<f64> {
        match self {
            RoomChamfer::Meters(d) => Some(*d),
            RoomChamfer::Invalid => None,
        }
    }
}

impl core::fmt::Display for RoomChamfer {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RoomChamfer::Meters(d) => write!(f, "{d:.4}"),
            RoomChamfer::Invalid => f.write_str("X"),
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for RoomChamfer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RoomChamfer::Meters(d) => s.serialize_f64(*d),
            RoomChamfer::Invalid => s.serialize_str("X"),
        }
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for RoomChamfer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = RoomChamfer;
            fn expecting(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
                f.write_str("a distance in meters or \"X\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<RoomChamfer, E> {
                Ok(RoomChamfer::Meters(v))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<RoomChamfer, E> {
                Ok(RoomChamfer::Meters(v as f64))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<RoomChamfer, E> {
                Ok(RoomChamfer::Meters(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<RoomChamfer, E> {
                if v == "X" {
                    Ok(RoomChamfer::Invalid)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunCounts {
    pub rooms: usize,
    pub invalid_rooms: usize,
    pub objects: usize,
    pub room_edges: usize,
    pub loop_closures_accepted: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    /// Translation RMSE per alignment mode, meters.
    pub ate_m: BTreeMap<AlignmentMode, f64>,
    pub per_room_chamfer: BTreeMap<RoomId, RoomChamfer>,
    /// Ground-truth room each predicted room was compared against.
    pub room_matches: BTreeMap<RoomId, u32>,
    pub room_precision: Option<f64>,
    pub room_recall: Option<f64>,
    pub stage_timings: BTreeMap<String, f64>,
    pub counts: RunCounts,
    /// Metrics that could not be computed and why.
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn mean_chamfer(&self) -> Option<f64> {
        let vals: Vec<f64> = self.per_room_chamfer.values().filter_map(|c| c.meters()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EvalConfig {
    pub truncation: Option<f64>,
    /// Nearest-neighbour radius for segmentation correspondences, meters.
    pub correspondence_radius: f64,
    pub max_time_diff: f64,
    /// Refine each room's alignment with Sim(3) ICP before chamfer.
    pub per_room_icp: bool,
    pub icp_iterations: usize,
    /// Source points sampled per ICP iteration.
    pub icp_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            truncation: None,
            correspondence_radius: 0.1,
            max_time_diff: 0.02,
            per_room_icp: true,
            icp_iterations: 30,
            icp_samples: 2000,
        }
    }
}

/// Everything a finished run exposes to evaluation.
#[derive(Clone, Copy, Debug)]
pub struct RunOutputs<'a> {
    pub graph: &'a SceneGraph,
    pub trajectory: &'a Trajectory,
    /// Ids reserved for batches whose reconstruction failed.
    pub invalid_rooms: &'a [RoomId],
    pub stage_timings: &'a BTreeMap<String, f64>,
    pub loop_closures_accepted: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruth<'a> {
    pub trajectory: Option<&'a Trajectory>,
    /// World cloud labelled by ground-truth room id.
    pub cloud: Option<&'a PointCloud>,
}

/// Max-overlap room precision and recall between two labelled clouds.
///
/// Every point is paired with its nearest neighbour in the other cloud when
/// closer than `radius`. A room's score is the largest fraction of its paired
/// points that land in a single room of the other cloud; precision averages
/// this over predicted rooms, recall over ground-truth rooms.
pub fn room_segmentation_pr(predicted: &PointCloud, gt: &PointCloud, radius: f64) -> Result<(f64, f64), EvalError> {
    let pred_labels = predicted.labels().ok_or(EvalError::Unlabeled("predicted"))?;
    let gt_labels = gt.labels().ok_or(EvalError::Unlabeled("ground-truth"))?;
    let precision = max_overlap(predicted.points(), pred_labels, gt.points(), gt_labels, radius)?;
    let recall = max_overlap(gt.points(), gt_labels, predicted.points(), pred_labels, radius)?;
    Ok((precision, recall))
}

fn max_overlap(
    src: &[Vector3<f64>],
    src_labels: &[u32],
    dst: &[Vector3<f64>],
    dst_labels: &[u32],
    radius: f64,
) -> Result<f64, EvalError> {
    let tree = KdTree::new(dst);
    let r2 = radius * radius;
    let mut hist: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for (p, &l) in src.iter().zip(src_labels) {
        if let Some((j, d2)) = tree.nearest(p) {
            if d2 <= r2 {
                *hist.entry(l).or_default().entry(dst_labels[j]).or_default() += 1;
            }
        }
    }
    if hist.is_empty() {
        return Err(EvalError::InsufficientOverlap { radius });
    }
    let sum: f64 = hist
        .values()
        .map(|h| {
            let total: usize = h.values().sum();
            *h.values().max().unwrap_or(&0) as f64 / total as f64
        })
        .sum();
    Ok(sum / hist.len() as f64)
}

/// Ground-truth label receiving the most nearest-neighbour votes.
fn majority_label(points: &[Vector3<f64>], tree: &KdTree, labels: &[u32]) -> Option<u32> {
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for p in points {
        if let Some((j, _)) = tree.nearest(p) {
            *votes.entry(labels[j]).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
}

fn stride_sample(points: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    if points.len() <= n || n == 0 {
        return points.to_vec();
    }
    (0..n).map(|i| points[i * points.len() / n]).collect()
}

/// Sim(3) ICP from `init`; each iteration re-pairs sampled source points
/// with their nearest target points, drops pairs beyond three times the
/// median distance and re-solves in closed form.
pub fn icp_sim3(
    src: &[Vector3<f64>],
    dst: &KdTree,
    dst_points: &[Vector3<f64>],
    init: Sim3,
    iterations: usize,
    samples: usize,
) -> Sim3 {
    let sample = stride_sample(src, samples);
    let mut current = init;
    let mut last_err = f64::INFINITY;
    for _ in 0..iterations {
        let mut pairs: Vec<(Vector3<f64>, Vector3<f64>, f64)> = sample
            .iter()
            .filter_map(|p| {
                dst.nearest(&current.transform_point(p))
                    .map(|(j, d2)| (*p, dst_points[j], d2))
            })
            .collect();
        if pairs.len() < 3 {
            break;
        }
        let mut d2s: Vec<f64> = pairs.iter().map(|x| x.2).collect();
        d2s.sort_by(f64::total_cmp);
        let cutoff = 9.0 * d2s[d2s.len() / 2];
        pairs.retain(|x| x.2 <= cutoff);
        let err = math::sqrt(pairs.iter().map(|x| x.2).sum::<f64>() / pairs.len() as f64);
        let (s, d): (Vec<_>, Vec<_>) = pairs.iter().map(|x| (x.0, x.1)).unzip();
        match umeyama_align(&s, &d, true) {
            Ok(t) => current = t,
            Err(_) => break,
        }
        if last_err.is_finite() && last_err - err <= 1e-9 * last_err.max(1e-12) {
            break;
        }
        last_err = err;
    }
    current
}

/// Assembles every metric the inputs allow; a missing ground-truth field
/// omits the dependent metrics and records a note.
pub fn evaluate_run(run: &RunOutputs<'_>, gt: &GroundTruth<'_>, config: &EvalConfig) -> RunReport {
    let mut report = RunReport {
        stage_timings: run.stage_timings.clone(),
        counts: RunCounts {
            rooms: run.graph.rooms().len(),
            invalid_rooms: run.invalid_rooms.len(),
            objects: run.graph.objects().len(),
            room_edges: run.graph.room_edges().len(),
            loop_closures_accepted: run.loop_closures_accepted,
            frames: run.trajectory.len(),
        },
        ..Default::default()
    };

    let mut global = Sim3::identity();
    match gt.trajectory {
        Some(gt_traj) => {
            for mode in [AlignmentMode::None, AlignmentMode::Se3, AlignmentMode::Sim3] {
                let options = AteOptions {
                    alignment: mode,
                    max_time_diff: config.max_time_diff,
                };
                match ate_rmse(run.trajectory, gt_traj, options) {
                    Ok((rmse, align)) => {
                        report.ate_m.insert(mode, rmse);
                        if mode == AlignmentMode::Sim3 {
                            global = align;
                        }
                    }
                    Err(e) => report.notes.push(format!("ate ({mode:?}): {e}")),
                }
            }
        }
        None => report.notes.push("ate: no ground-truth trajectory".into()),
    }

    for id in run.invalid_rooms {
        report.per_room_chamfer.insert(*id, RoomChamfer::Invalid);
    }
    let Some(gt_cloud) = gt.cloud else {
        report
            .notes
            .push("chamfer and segmentation: no ground-truth cloud".into());
        return report;
    };
    let Some(gt_labels) = gt_cloud.labels() else {
        report
            .notes
            .push("chamfer and segmentation: ground-truth cloud is unlabeled".into());
        return report;
    };
    if gt_cloud.is_empty() {
        report
            .notes
            .push("chamfer and segmentation: ground-truth cloud is empty".into());
        return report;
    }
    let gt_tree = KdTree::new(gt_cloud.points());

    let mut predicted = PointCloud::default();
    for (id, room) in run.graph.rooms() {
        if room.point_cloud.is_empty() {
            report.per_room_chamfer.insert(*id, RoomChamfer::Invalid);
            continue;
        }
        let to_gt = global * room.reference_pose;
        let world = room.point_cloud.transformed(&to_gt);
        predicted.extend(&world.relabeled(id.0));

        let Some(label) = majority_label(world.points(), &gt_tree, gt_labels) else {
            continue;
        };
        report.room_matches.insert(*id, label);
        let target = gt_cloud.filter_label(label);
        let refined = if config.per_room_icp {
            let tree = KdTree::new(target.points());
            icp_sim3(
                room.point_cloud.points(),
                &tree,
                target.points(),
                to_gt,
                config.icp_iterations,
                config.icp_samples,
            )
        } else {
            to_gt
        };
        let options = ChamferOptions {
            truncation: config.truncation,
        };
        let initial = chamfer_distance(&world, &target, options);
        let aligned = chamfer_distance(&room.point_cloud.transformed(&refined), &target, options);
        let best = match (initial, aligned) {
            (Ok(a), Ok(b)) => Ok(a.min(b)),
            (Ok(a), Err(_)) | (Err(_), Ok(a)) => Ok(a),
            (Err(e), Err(_)) => Err(e),
        };
        match best {
            Ok(d) => {
                report.per_room_chamfer.insert(*id, RoomChamfer::Meters(d));
            }
            Err(e) => {
                report.notes.push(format!("chamfer {id}: {e}"));
                report.per_room_chamfer.insert(*id, RoomChamfer::Invalid);
            }
        }
    }

    if predicted.is_empty() {
        report.notes.push("segmentation: no reconstructed rooms".into());
    } else {
        match room_segmentation_pr(&predicted, gt_cloud, config.correspondence_radius) {
            Ok((p, r)) => {
                report.room_precision = Some(p);
                report.room_recall = Some(r);
            }
            Err(e) => report.notes.push(format!("segmentation: {e}")),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Tangent7;
    use alloc::vec;
    use proptest::prelude::*;

    fn grid(x0: f64, nx: usize, ny: usize, spacing: f64) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                pts.push(Vector3::new(x0 + i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        pts
    }

    fn labeled(parts: &[(Vec<Vector3<f64>>, u32)]) -> PointCloud {
        let mut c = PointCloud::default();
        for (pts, l) in parts {
            c.extend(&PointCloud::labeled_uniform(pts.clone(), *l).unwrap());
        }
        c
    }

    #[test]
    fn perfect_labeling_scores_one() {
        let gt = labeled(&[(grid(0.0, 10, 10, 0.05), 0), (grid(5.0, 10, 10, 0.05), 1)]);
        assert_eq!(room_segmentation_pr(&gt, &gt, 0.1).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn one_prediction_spanning_two_rooms() {
        // Two equal ground-truth rooms, one predicted room covering both.
        let a = grid(0.0, 10, 10, 0.05);
        let b = grid(5.0, 10, 10, 0.05);
        let gt = labeled(&[(a.clone(), 0), (b.clone(), 1)]);
        let pred = labeled(&[([a, b].concat(), 7)]);
        let (p, r) = room_segmentation_pr(&pred, &gt, 0.1).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_predictions_tiling_one_room() {
        // 70 columns predicted as room 3, 30 as room 4, all one gt room.
        let all = grid(0.0, 100, 10, 0.05);
        let (left, right) = all.split_at(700);
        let gt = labeled(&[(all.clone(), 0)]);
        let pred = labeled(&[(left.to_vec(), 3), (right.to_vec(), 4)]);
        let (p, r) = room_segmentation_pr(&pred, &gt, 0.1).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!((r - 0.7).abs() < 1e-12);
    }

    #[test]
    fn segmentation_requires_overlap_and_labels() {
        let a = labeled(&[(grid(0.0, 3, 3, 0.05), 0)]);
        let b = labeled(&[(grid(10.0, 3, 3, 0.05), 0)]);
        assert_eq!(
            room_segmentation_pr(&a, &b, 0.1),
            Err(EvalError::InsufficientOverlap { radius: 0.1 })
        );
        let plain = a.without_labels();
        assert_eq!(
            room_segmentation_pr(&plain, &a, 0.1),
            Err(EvalError::Unlabeled("predicted"))
        );
    }

    proptest! {
        #[test]
        fn precision_and_recall_swap(labels_a in proptest::collection::vec(0u32..3, 60),
                                     labels_b in proptest::collection::vec(0u32..4, 60)) {
            let pts = grid(0.0, 6, 10, 0.05);
            let a = PointCloud::with_labels(pts.clone(), labels_a).unwrap();
            let b = PointCloud::with_labels(pts, labels_b).unwrap();
            let (p, r) = room_segmentation_pr(&a, &b, 0.1).unwrap();
            let (p2, r2) = room_segmentation_pr(&b, &a, 0.1).unwrap();
            prop_assert_eq!((p, r), (r2, p2));
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn icp_recovers_a_small_similarity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        for _ in 0..1500 {
            let (u, v) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            pts.push(Vector3::new(u, v, 0.0));
            pts.push(Vector3::new(u, 0.0, v));
            pts.push(Vector3::new(0.0, u, v));
        }
        let truth = Sim3::exp(&Tangent7::new(
            Vector3::new(0.02, -0.01, 0.03),
            Vector3::new(0.01, 0.02, -0.01),
            0.01,
        ));
        let dst: Vec<_> = pts.iter().map(|p| truth.transform_point(p)).collect();
        let tree = KdTree::new(&dst);
        let est = icp_sim3(&pts, &tree, &dst, Sim3::identity(), 50, 5000);
        let err = (est.inverse() * truth).log().unwrap().norm();
        assert!(err < 1e-6, "{err}");
    }

    fn report_fixture(invalid: &[RoomId]) -> RunReport {
        use crate::scene_graph::FrameId;
        use crate::scene_graph::RoomNode;
        let room_pts = grid(0.0, 20, 20, 0.05);
        let mut g = SceneGraph::new();
        g.add_room(RoomNode {
            reference_pose: Sim3::identity(),
            anchor: FrameId(0),
            local_frame_poses: Default::default(),
            point_cloud: PointCloud::new(room_pts.clone()).unwrap(),
            frame_features: Vec::new(),
            finalized: true,
        });
        let poses: Vec<(f64, Sim3)> = (0..10)
            .map(|i| {
                (
                    i as f64 * 0.1,
                    Sim3::from_translation(Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.0)),
                )
            })
            .collect();
        let traj = Trajectory::new(poses).unwrap();
        let scaled = traj.left_multiplied(&Sim3::from_scale(2.0));
        let gt_pts = room_pts.iter().map(|p| p * 2.0).collect();
        let gt_cloud = labeled(&[(gt_pts, 5)]);
        let timings = BTreeMap::new();
        let run = RunOutputs {
            graph: &g,
            trajectory: &traj,
            invalid_rooms: invalid,
            stage_timings: &timings,
            loop_closures_accepted: 0,
        };
        let gt = GroundTruth {
            trajectory: Some(&scaled),
            cloud: Some(&gt_cloud),
        };
        evaluate_run(&run, &gt, &EvalConfig::default())
    }

    #[test]
    fn evaluation_of_a_perfect_room() {
        let report = report_fixture(&[]);
        assert!(report.ate_m[&AlignmentMode::Sim3] < 1e-9);
        assert!(report.ate_m[&AlignmentMode::None] > 1.0);
        assert_eq!(report.room_matches[&RoomId(0)], 5);
        assert!(report.per_room_chamfer[&RoomId(0)].meters().unwrap() < 1e-9);
        assert_eq!((report.room_precision, report.room_recall), (Some(1.0), Some(1.0)));
        assert_eq!(report.counts.objects, 0);
        assert!(report.stage_timings.is_empty());
        assert_eq!(report, report_fixture(&[]));
    }

    #[test]
    fn failed_rooms_are_reported_as_x() {
        let report = report_fixture(&[RoomId(9)]);
        assert_eq!(report.per_room_chamfer[&RoomId(9)], RoomChamfer::Invalid);
        assert!(report.per_room_chamfer[&RoomId(0)].meters().is_some());
        assert_eq!(format!("{}", RoomChamfer::Invalid), "X");
        assert_eq!(report.counts.invalid_rooms, 1);
    }

    #[test]
    fn missing_ground_truth_degrades_gracefully() {
        let g = SceneGraph::new();
        let traj = Trajectory::new(vec![(0.0, Sim3::identity())]).unwrap();
        let timings = BTreeMap::new();
        let run = RunOutputs {
            graph: &g,
            trajectory: &traj,
            invalid_rooms: &[],
            stage_timings: &timings,
            loop_closures_accepted: 0,
        };
        let report = evaluate_run(&run, &GroundTruth::default(), &EvalConfig::default());
        assert!(report.ate_m.is_empty());
        assert!(report.room_precision.is_none());
        assert_eq!(report.notes.len(), 2);
    }
}
