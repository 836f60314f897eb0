use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ReconstructionError, ReconstructionProvider, RelativePoseEstimate, RoomReconstruction};
use crate::geometry::{PixelCloud, PointCloud, Sim3, Tangent7};
use crate::scene_graph::FrameId;
use crate::seed;
use crate::segmenter::FrameRecord;
use crate::simulator::{render_objects, Camera, World};

const BATCH_STREAM: u64 = 0x6261_7463;
const FAIL_STREAM: u64 = 0x6661_696c;
const PAIR_STREAM: u64 = 0x7061_6972;
const VIEW_STREAM: u64 = 0x7669_6577;
const REGION_STREAM: u64 = 0x7265_6769;

/// Share of a batch's frames a room must hold for its surfaces to appear in
/// the batch reconstruction.
const ROOM_SHARE: f64 = 0.2;
/// Maximum camera distance for two frames to be co-visible, meters.
const COVISIBILITY_RANGE: f64 = 6.0;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OracleNoiseModel {
    pub pose_rot_sigma: f64,
    pub pose_trans_sigma: f64,
    pub point_sigma: f64,
    pub batch_scale_range: [f64; 2],
    pub pair_failure_rate: f64,
    /// Probability that a whole batch reconstruction fails.
    pub batch_failure_rate: f64,
    /// Misregistration of a secondary room inside a batch that spans
    /// several rooms: rotation (radians), translation (meters) and log-scale
    /// sigmas of one shared perturbation per secondary room.
    pub cross_room_rot_sigma: f64,
    pub cross_room_trans_sigma: f64,
    pub cross_room_scale_sigma: f64,
    pub rng_seed: u64,
}

impl Default for OracleNoiseModel {
    fn default() -> Self {
        Self {
            pose_rot_sigma: 0.01,
            pose_trans_sigma: 0.02,
            point_sigma: 0.01,
            batch_scale_range: [0.8, 1.25],
            pair_failure_rate: 0.0,
            batch_failure_rate: 0.0,
            cross_room_rot_sigma: 0.03,
            cross_room_trans_sigma: 0.05,
            cross_room_scale_sigma: 0.03,
            rng_seed: 0,
        }
    }
}

impl OracleNoiseModel {
    /// No noise, no failures, metric scale.
    pub fn noiseless() -> Self {
        Self {
            pose_rot_sigma: 0.0,
            pose_trans_sigma: 0.0,
            point_sigma: 0.0,
            batch_scale_range: [1.0, 1.0],
            cross_room_rot_sigma: 0.0,
            cross_room_trans_sigma: 0.0,
            cross_room_scale_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ReconstructionError> {
        let sigmas = [
            self.pose_rot_sigma,
            self.pose_trans_sigma,
            self.point_sigma,
            self.cross_room_rot_sigma,
            self.cross_room_trans_sigma,
            self.cross_room_scale_sigma,
        ];
        if !sigmas.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(ReconstructionError::Config("noise sigmas must be finite and >= 0"));
        }
        let [lo, hi] = self.batch_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ReconstructionError::Config(
                "batch_scale_range must satisfy 0 < min <= max",
            ));
        }
        for p in [self.pair_failure_rate, self.batch_failure_rate] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ReconstructionError::Config("failure rates must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Room membership of a batch's frames and the placement of each room
/// that contributes surfaces.
struct BatchLayout {
    rooms: Vec<Option<u32>>,
    placement: BTreeMap<u32, Sim3>,
}

impl BatchLayout {
    /// World pose of frame `i` as the batch reconstruction sees it.
    fn placed(&self, i: usize, truth: &Sim3) -> Sim3 {
        match self.rooms[i].and_then(|r| self.placement.get(&r)) {
            Some(m) => *m * *truth,
            None => *truth,
        }
    }
}

/// Reconstruction backed by simulator ground truth.
///
/// Every random draw is seeded from the noise seed and the ids involved in
/// the request, so results do not depend on call order.
pub struct OracleProvider<'w> {
    world: &'w World,
    poses: BTreeMap<FrameId, Sim3>,
    noise: OracleNoiseModel,
    camera: Camera,
    render_views: bool,
    surfaces: BTreeMap<u32, Vec<Vector3<f64>>>,
}

impl<'w> OracleProvider<'w> {
    /// Frames without a ground-truth pose are ignored.
    pub fn new(world: &'w World, frames: &[FrameRecord], noise: OracleNoiseModel) -> Result<Self, ReconstructionError> {
        noise.validate()?;
        let poses = frames.iter().filter_map(|f| f.gt_pose.map(|p| (f.id, p))).collect();
        let surfaces = world.rooms.iter().map(|r| (r.id, world.room_surface(r.id))).collect();
        Ok(Self {
            world,
            poses,
            noise,
            camera: Camera::default(),
            render_views: true,
            surfaces,
        })
    }

    /// Skips per-frame point rendering when object lifting is not needed.
    pub fn with_views(mut self, render: bool) -> Self {
        self.render_views = render;
        self
    }

    pub fn noise(&self) -> &OracleNoiseModel {
        &self.noise
    }

    fn pose(&self, id: FrameId) -> Result<Sim3, ReconstructionError> {
        self.poses
            .get(&id)
            .copied()
            .ok_or(ReconstructionError::UnknownFrame(id))
    }

    fn batch_scale(&self, ids: &[u64]) -> f64 {
        let [lo, hi] = self.noise.batch_scale_range;
        if lo == hi {
            return lo;
        }
        let mut rng = seed::rng(
            self.noise.rng_seed,
            [BATCH_STREAM].into_iter().chain(ids.iter().copied()),
        );
        rng.random_range(lo..=hi)
    }

    /// World pose of the local frame the oracle uses for this batch, i.e.
    /// the reference pose that maps local poses onto ground truth.
    pub fn reference_pose(&self, frames: &[FrameId]) -> Result<Sim3, ReconstructionError> {
        if frames.is_empty() {
            return Err(ReconstructionError::TooFewFrames(0));
        }
        let truth: Vec<Sim3> = frames.iter().map(|f| self.pose(*f)).collect::<Result<_, _>>()?;
        let ids: Vec<u64> = frames.iter().map(|f| f.0).collect();
        let s = self.batch_scale(&ids);
        let layout = self.layout(&truth, &ids);
        Ok(layout.placed(0, &truth[0]) * Sim3::from_scale(1.0 / s))
    }

    /// Groups batch frames by room and draws the misregistration of every
    /// secondary room. The room holding most frames (ties to the lower id)
    /// is registered exactly; frames outside any room follow it.
    fn layout(&self, truth: &[Sim3], ids: &[u64]) -> BatchLayout {
        let rooms: Vec<Option<u32>> = truth
            .iter()
            .map(|t| self.world.room_at(&t.translation().xy()))
            .collect();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for r in rooms.iter().flatten() {
            *counts.entry(*r).or_default() += 1;
        }
        let dominant = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(r, _)| *r);
        let min_count = ROOM_SHARE * truth.len() as f64;
        let mut placement = BTreeMap::new();
        for (&room, &n) in &counts {
            if (n as f64) < min_count {
                continue;
            }
            let m = if Some(room) == dominant {
                Sim3::identity()
            } else {
                let mut rng = seed::rng(
                    self.noise.rng_seed,
                    [REGION_STREAM, room as u64].into_iter().chain(ids.iter().copied()),
                );
                let rot = Self::gaussian(self.noise.cross_room_rot_sigma);
                let trans = Self::gaussian(self.noise.cross_room_trans_sigma);
                let scale = Self::gaussian(self.noise.cross_room_scale_sigma);
                let xi = Tangent7::new(
                    Vector3::from_fn(|_, _| trans.sample(&mut rng)),
                    Vector3::from_fn(|_, _| rot.sample(&mut rng)),
                    scale.sample(&mut rng),
                );
                // Perturb about the room centre rather than the world origin.
                let c = self.world.room(room).map_or(Vector3::zeros(), |r| {
                    let c = r.center();
                    Vector3::new(c.x, c.y, 0.0)
                });
                Sim3::from_translation(c) * Sim3::exp(&xi) * Sim3::from_translation(-c)
            };
            placement.insert(room, m);
        }
        BatchLayout { rooms, placement }
    }

    fn gaussian(sigma: f64) -> Normal<f64> {
        Normal::new(0.0, sigma).expect("validated sigma")
    }

    fn pose_noise<R: Rng>(&self, rng: &mut R) -> Sim3 {
        let rot = Self::gaussian(self.noise.pose_rot_sigma);
        let trans = Self::gaussian(self.noise.pose_trans_sigma);
        let rho = Vector3::from_fn(|_, _| trans.sample(rng));
        let phi = Vector3::from_fn(|_, _| rot.sample(rng));
        Sim3::exp(&Tangent7::new(rho, phi, 0.0))
    }
}

impl ReconstructionProvider for OracleProvider<'_> {
    fn reconstruct_batch(&self, frames: &[FrameRecord]) -> Result<RoomReconstruction, ReconstructionError> {
        if frames.len() < 2 {
            return Err(ReconstructionError::TooFewFrames(frames.len()));
        }
        let truth: Vec<Sim3> = frames.iter().map(|f| self.pose(f.id)).collect::<Result<_, _>>()?;
        let ids: Vec<u64> = frames.iter().map(|f| f.id.0).collect();

        if self.noise.batch_failure_rate > 0.0 {
            let mut rng = seed::rng(
                self.noise.rng_seed,
                [FAIL_STREAM].into_iter().chain(ids.iter().copied()),
            );
            if rng.random::<f64>() < self.noise.batch_failure_rate {
                return Err(ReconstructionError::Failed("simulated provider failure".into()));
            }
        }

        let s = self.batch_scale(&ids);
        let layout = self.layout(&truth, &ids);
        let gauge = Sim3::from_scale(s) * layout.placed(0, &truth[0]).inverse();
        let mut rng = seed::rng(
            self.noise.rng_seed,
            [BATCH_STREAM, 1].into_iter().chain(ids.iter().copied()),
        );

        let mut frame_poses = BTreeMap::new();
        for (i, (f, t)) in frames.iter().zip(&truth).enumerate() {
            let local = if i == 0 {
                Sim3::from_scale(s)
            } else {
                gauge * layout.placed(i, t) * self.pose_noise(&mut rng)
            };
            frame_poses.insert(f.id, local);
        }

        let point_noise = Self::gaussian(self.noise.point_sigma);
        let mut points = Vec::new();
        for (room, m) in &layout.placement {
            let to_local = gauge * *m;
            for x in &self.surfaces[room] {
                let noisy = x + Vector3::from_fn(|_, _| point_noise.sample(&mut rng));
                points.push(to_local.transform_point(&noisy));
            }
        }

        let mut per_frame_points = BTreeMap::new();
        if self.render_views {
            for (f, t) in frames.iter().zip(&truth) {
                let view = render_objects(self.world, &self.camera, t);
                let mut vrng = seed::rng(self.noise.rng_seed, [VIEW_STREAM, f.id.0]);
                let entries = view
                    .points
                    .iter()
                    .map(|(px, p)| (px, p + Vector3::from_fn(|_, _| point_noise.sample(&mut vrng))))
                    .collect();
                per_frame_points.insert(f.id, PixelCloud::new(self.camera.width, self.camera.height, entries));
            }
        }

        Ok(RoomReconstruction {
            anchor: frames[0].id,
            frame_poses,
            points: PointCloud::new(points).map_err(|_| ReconstructionError::Failed("non-finite points".into()))?,
            per_frame_points,
        })
    }

    fn relative_pose(&self, p: FrameId, q: FrameId) -> Result<RelativePoseEstimate, ReconstructionError> {
        let (tp, tq) = (self.pose(p)?, self.pose(q)?);
        if p == q {
            return Ok(RelativePoseEstimate {
                pose: Sim3::identity(),
                valid: true,
                confidence: 1.0,
            });
        }
        let (a, b) = (tp.translation().xy(), tq.translation().xy());
        if (a - b).norm() > COVISIBILITY_RANGE || !self.world.line_of_sight(&a, &b) {
            return Ok(RelativePoseEstimate::invalid());
        }
        let mut rng = seed::rng(self.noise.rng_seed, [PAIR_STREAM, p.0, q.0]);
        if self.noise.pair_failure_rate > 0.0 && rng.random::<f64>() < self.noise.pair_failure_rate {
            return Ok(RelativePoseEstimate::invalid());
        }
        Ok(RelativePoseEstimate {
            pose: tp.inverse() * tq * self.pose_noise(&mut rng),
            valid: true,
            confidence: 1.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{chamfer_distance, ChamferOptions};
    use crate::simulator::{generate_sequence, generate_world, Sequence, SequenceSpec, WorldConfig};

    fn fixture(order: &[u32]) -> (World, Sequence) {
        let world = generate_world(&WorldConfig::default(), 21).unwrap();
        let spec = SequenceSpec {
            visit_order: order.to_vec(),
            tracklets: false,
            ..Default::default()
        };
        let seq = generate_sequence(&world, &spec).unwrap();
        (world, seq)
    }

    fn tangent_gap(a: &Sim3, b: &Sim3) -> f64 {
        (a.inverse() * *b).log().unwrap().norm()
    }

    #[test]
    fn noiseless_oracle_reproduces_relative_poses() {
        let (world, seq) = fixture(&[0, 1]);
        let oracle = OracleProvider::new(&world, &seq.frames, OracleNoiseModel::noiseless()).unwrap();
        let batch = &seq.frames[0..40];
        let rec = oracle.reconstruct_batch(batch).unwrap();
        assert_eq!(rec.frame_poses[&batch[0].id], Sim3::identity());
        let a = batch[0].gt_pose.unwrap();
        for f in batch {
            let expected = a.inverse() * f.gt_pose.unwrap();
            assert!(tangent_gap(&rec.frame_poses[&f.id], &expected) < 1e-12);
        }
    }

    #[test]
    fn doubled_scale_doubles_translations_only() {
        let (world, seq) = fixture(&[0]);
        let noise = OracleNoiseModel {
            batch_scale_range: [2.0, 2.0],
            ..OracleNoiseModel::noiseless()
        };
        let oracle = OracleProvider::new(&world, &seq.frames, noise).unwrap();
        let batch = &seq.frames[0..30];
        let rec = oracle.reconstruct_batch(batch).unwrap();
        for w in batch.windows(2) {
            let (l0, l1) = (rec.frame_poses[&w[0].id], rec.frame_poses[&w[1].id]);
            let (g0, g1) = (w[0].gt_pose.unwrap(), w[1].gt_pose.unwrap());
            let dl = (l1.translation() - l0.translation()).norm();
            let dg = (g1.translation() - g0.translation()).norm();
            assert!((dl - 2.0 * dg).abs() < 1e-12);
            let rl = l0.rotation().inverse() * l1.rotation();
            let rg = g0.rotation().inverse() * g1.rotation();
            assert!(rl.angle_to(&rg) < 1e-12);
        }
    }

    #[test]
    fn single_frame_and_unknown_frames_are_errors() {
        let (world, seq) = fixture(&[0]);
        let oracle = OracleProvider::new(&world, &seq.frames, OracleNoiseModel::default()).unwrap();
        assert_eq!(
            oracle.reconstruct_batch(&seq.frames[..1]).unwrap_err(),
            ReconstructionError::TooFewFrames(1)
        );
        assert_eq!(
            oracle.relative_pose(FrameId(0), FrameId(100_000)).unwrap_err(),
            ReconstructionError::UnknownFrame(FrameId(100_000))
        );
    }

    #[test]
    fn relative_pose_identity_and_visibility() {
        let (world, seq) = fixture(&[0, 1]);
        let oracle = OracleProvider::new(&world, &seq.frames, OracleNoiseModel::noiseless()).unwrap();
        let same = oracle.relative_pose(FrameId(3), FrameId(3)).unwrap();
        assert!(same.valid && same.pose == Sim3::identity());
        let (a, b) = (&seq.frames[10], &seq.frames[11]);
        let est = oracle.relative_pose(a.id, b.id).unwrap();
        let truth = a.gt_pose.unwrap().inverse() * b.gt_pose.unwrap();
        assert!(est.valid && tangent_gap(&est.pose, &truth) < 1e-12);

        // Deep inside two different rooms: walls block the line of sight.
        let v0 = seq.visits[0];
        let v1 = seq.visits[1];
        let mid0 = &seq.frames[(v0.start + v0.end) / 2];
        let mid1 = &seq.frames[(v1.start + v1.end) / 2];
        assert!(!oracle.relative_pose(mid0.id, mid1.id).unwrap().valid);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let (world, seq) = fixture(&[0, 1]);
        let noise = OracleNoiseModel {
            rng_seed: 9,
            ..Default::default()
        };
        let oracle = OracleProvider::new(&world, &seq.frames, noise)
            .unwrap()
            .with_views(false);
        let a = oracle.reconstruct_batch(&seq.frames[0..20]).unwrap();
        let _ = oracle.reconstruct_batch(&seq.frames[20..40]).unwrap();
        let b = oracle.reconstruct_batch(&seq.frames[0..20]).unwrap();
        assert_eq!(a, b);
        let p = oracle.relative_pose(FrameId(4), FrameId(6)).unwrap();
        assert_eq!(p, oracle.relative_pose(FrameId(4), FrameId(6)).unwrap());
    }

    #[test]
    fn gauge_and_scale_are_consistent() {
        let (world, seq) = fixture(&[0]);
        let noise = OracleNoiseModel {
            rng_seed: 4,
            ..Default::default()
        };
        let sigma = noise.point_sigma;
        let oracle = OracleProvider::new(&world, &seq.frames, noise)
            .unwrap()
            .with_views(false);
        let batch = &seq.frames[0..60];
        let ids: Vec<FrameId> = batch.iter().map(|f| f.id).collect();
        let rec = oracle.reconstruct_batch(batch).unwrap();
        let reference = oracle.reference_pose(&ids).unwrap();
        // Undoing the gauge recovers ground-truth poses up to pose noise.
        for f in batch {
            let world_pose = reference * rec.frame_poses[&f.id];
            let err = (world_pose.translation() - f.gt_pose.unwrap().translation()).norm();
            assert!(err < 0.15, "{err}");
        }
        let descaled = rec.points.transformed(&reference);
        let gt = PointCloud::new(world.room_surface(0)).unwrap();
        let c = chamfer_distance(&descaled, &gt, ChamferOptions::default()).unwrap();
        assert!(c <= 3.0 * sigma, "{c}");
    }

    #[test]
    fn secondary_rooms_are_misregistered_as_a_block() {
        let (world, seq) = fixture(&[0, 1]);
        let (v0, v1) = (seq.visits[0], seq.visits[1]);
        let batch = &seq.frames[v0.end - 30..v1.start + 20];
        let ids: Vec<FrameId> = batch.iter().map(|f| f.id).collect();
        let room_of = |f: &FrameRecord| world.room_at(&f.gt_pose.unwrap().translation().xy());
        let only_cross = OracleNoiseModel {
            cross_room_rot_sigma: 0.05,
            cross_room_trans_sigma: 0.1,
            cross_room_scale_sigma: 0.05,
            ..OracleNoiseModel::noiseless()
        };
        for (noise, shifted) in [(OracleNoiseModel::noiseless(), false), (only_cross, true)] {
            let oracle = OracleProvider::new(&world, &seq.frames, noise)
                .unwrap()
                .with_views(false);
            let rec = oracle.reconstruct_batch(batch).unwrap();
            let reference = oracle.reference_pose(&ids).unwrap();
            let mut second: Vec<Sim3> = Vec::new();
            for f in batch {
                let placed = reference * rec.frame_poses[&f.id];
                let gap = tangent_gap(&placed, &f.gt_pose.unwrap());
                if room_of(f) == Some(1) {
                    second.push(placed * f.gt_pose.unwrap().inverse());
                    assert_eq!(gap > 1e-6, shifted, "{gap}");
                } else {
                    assert!(gap < 1e-9, "{gap}");
                }
            }
            // One shared offset for the whole room.
            assert!(second.len() >= 20);
            for w in second.windows(2) {
                assert!(tangent_gap(&w[0], &w[1]) < 1e-9);
            }
        }
    }

    #[test]
    fn batch_failures_follow_the_rate() {
        let (world, seq) = fixture(&[0]);
        let always = OracleNoiseModel {
            batch_failure_rate: 1.0,
            ..Default::default()
        };
        let oracle = OracleProvider::new(&world, &seq.frames, always).unwrap();
        assert!(matches!(
            oracle.reconstruct_batch(&seq.frames[0..5]),
            Err(ReconstructionError::Failed(_))
        ));
        let bad = OracleNoiseModel {
            batch_scale_range: [0.0, 1.0],
            ..Default::default()
        };
        assert!(OracleProvider::new(&world, &seq.frames, bad).is_err());
    }
}
