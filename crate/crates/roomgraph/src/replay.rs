//! Replay of precomputed reconstructions, so outputs of real models run
//! offline can drive the pipeline.
//!
//! A replay directory holds `batch_<k>.txt` (TUM poses with a scale column)
//! next to `batch_<k>.ply` (points in the same batch frame), and optionally
//! `pairs.txt` with one relative pose per line:
//! `stamp_p stamp_q valid confidence tx ty tz qx qy qz qw s`.
//! Frames are matched to the input stream by timestamp.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::Path;

use nalgebra::Vector3;
use roomgraph_core::geometry::{PointCloud, Sim3};
use roomgraph_core::reconstruction::{
    ReconstructionError, ReconstructionProvider, RelativePoseEstimate, RoomReconstruction,
};
use roomgraph_core::scene_graph::FrameId;
use roomgraph_core::segmenter::FrameRecord;

use crate::io::{ply, read_text, tum, write_file, IoError};

pub const PAIRS_FILE: &str = "pairs.txt";
/// Largest timestamp difference, seconds, for matching replay rows to frames.
pub const STAMP_TOLERANCE: f64 = 1e-6;

struct StoredBatch {
    poses: BTreeMap<FrameId, Sim3>,
    points: PointCloud,
}

pub struct ReplayProvider {
    batches: Vec<StoredBatch>,
    pairs: BTreeMap<(FrameId, FrameId), RelativePoseEstimate>,
}

fn batch_paths(dir: &Path, k: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join(format!("batch_{k:03}.txt")),
        dir.join(format!("batch_{k:03}.ply")),
    )
}

/// Maps timestamps to frame ids within [`STAMP_TOLERANCE`].
struct StampIndex(Vec<(f64, FrameId)>);

impl StampIndex {
    fn new(frames: &[FrameRecord]) -> Self {
        let mut v: Vec<(f64, FrameId)> = frames.iter().map(|f| (f.timestamp, f.id)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self(v)
    }

    fn lookup(&self, stamp: f64) -> Option<FrameId> {
        let i = self.0.partition_point(|(t, _)| *t < stamp);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| self.0.get(j))
            .filter(|(t, _)| (t - stamp).abs() <= STAMP_TOLERANCE)
            .min_by(|a, b| (a.0 - stamp).abs().total_cmp(&(b.0 - stamp).abs()))
            .map(|(_, id)| *id)
    }
}

impl ReplayProvider {
    /// Loads every `batch_<k>` pair in `dir`; `frames` is the input stream
    /// the replay belongs to.
    pub fn load(dir: &Path, frames: &[FrameRecord]) -> Result<Self, IoError> {
        let index = StampIndex::new(frames);
        let mut stems: Vec<String> = std::fs::read_dir(dir)
            .map_err(|source| IoError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.starts_with("batch_") && n.ends_with(".txt"))
            .map(|n| n.trim_end_matches(".txt").to_string())
            .collect();
        stems.sort();
        let mut batches = Vec::new();
        for stem in stems {
            let txt = dir.join(format!("{stem}.txt"));
            let mut poses = BTreeMap::new();
            for (stamp, pose) in tum::read_poses(&txt)? {
                let id = index
                    .lookup(stamp)
                    .ok_or_else(|| IoError::invalid(&txt, format!("no input frame at t={stamp}")))?;
                poses.insert(id, pose);
            }
            let points = ply::read(&dir.join(format!("{stem}.ply")))?;
            batches.push(StoredBatch { poses, points });
        }
        let mut pairs = BTreeMap::new();
        let pairs_path = dir.join(PAIRS_FILE);
        if pairs_path.exists() {
            let text = read_text(&pairs_path)?;
            for (n, raw) in text.lines().enumerate() {
                let content = raw.split('#').next().unwrap_or("").trim();
                if content.is_empty() {
                    continue;
                }
                let parse_err = |reason: String| IoError::Parse {
                    path: pairs_path.clone(),
                    line: n + 1,
                    reason,
                };
                let v: Vec<f64> = content
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(format!("bad number `{t}`"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != 12 {
                    return Err(parse_err(format!("expected 12 fields, got {}", v.len())));
                }
                let id = |t: f64| {
                    index
                        .lookup(t)
                        .ok_or_else(|| parse_err(format!("no input frame at t={t}")))
                };
                let pose = Sim3::from_wxyz([v[10], v[7], v[8], v[9]], Vector3::new(v[4], v[5], v[6]), v[11])
                    .map_err(|e| parse_err(e.to_string()))?;
                let estimate = RelativePoseEstimate {
                    pose,
                    valid: v[2] != 0.0,
                    confidence: v[3],
                };
                pairs.insert((id(v[0])?, id(v[1])?), estimate);
            }
        }
        Ok(Self { batches, pairs })
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }
}

impl ReconstructionProvider for ReplayProvider {
    /// Serves the stored batch with exactly the requested frames, else the
    /// smallest one containing them all. Points come back whole.
    fn reconstruct_batch(&self, frames: &[FrameRecord]) -> Result<RoomReconstruction, ReconstructionError> {
        if frames.len() < 2 {
            return Err(ReconstructionError::TooFewFrames(frames.len()));
        }
        let wanted: BTreeSet<FrameId> = frames.iter().map(|f| f.id).collect();
        let covering = self
            .batches
            .iter()
            .filter(|b| wanted.iter().all(|f| b.poses.contains_key(f)))
            .min_by_key(|b| b.poses.len())
            .ok_or_else(|| ReconstructionError::Failed("no stored batch covers the request".into()))?;
        Ok(RoomReconstruction {
            anchor: frames[0].id,
            frame_poses: wanted.iter().map(|f| (*f, covering.poses[f])).collect(),
            points: covering.points.clone(),
            per_frame_points: BTreeMap::new(),
        })
    }

    fn relative_pose(&self, p: FrameId, q: FrameId) -> Result<RelativePoseEstimate, ReconstructionError> {
        if p == q {
            return Ok(RelativePoseEstimate {
                pose: Sim3::identity(),
                valid: true,
                confidence: 1.0,
            });
        }
        if let Some(e) = self.pairs.get(&(p, q)) {
            return Ok(*e);
        }
        if let Some(e) = self.pairs.get(&(q, p)) {
            return Ok(RelativePoseEstimate {
                pose: e.pose.inverse(),
                ..*e
            });
        }
        Ok(RelativePoseEstimate::invalid())
    }
}

/// Wraps a provider and keeps every successful answer for
/// [`Recorder::write`].
pub struct Recorder<'p, P: ?Sized> {
    inner: &'p P,
    stamps: BTreeMap<FrameId, f64>,
    batches: RefCell<Vec<(Vec<FrameId>, RoomReconstruction)>>,
    pairs: RefCell<BTreeMap<(FrameId, FrameId), RelativePoseEstimate>>,
}

impl<'p, P: ReconstructionProvider + ?Sized> Recorder<'p, P> {
    pub fn new(inner: &'p P, frames: &[FrameRecord]) -> Self {
        Self {
            inner,
            stamps: frames.iter().map(|f| (f.id, f.timestamp)).collect(),
            batches: RefCell::new(Vec::new()),
            pairs: RefCell::new(BTreeMap::new()),
        }
    }

    /// Writes the replay files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        for (k, (frames, rec)) in self.batches.borrow().iter().enumerate() {
            let (txt, cloud) = batch_paths(dir, k);
            let poses: Vec<(f64, Sim3)> = frames.iter().map(|f| (self.stamps[f], rec.frame_poses[f])).collect();
            tum::write_poses(&txt, &poses, true)?;
            ply::write(&cloud, &rec.points)?;
        }
        let mut text = String::from("# stamp_p stamp_q valid confidence tx ty tz qx qy qz qw s\n");
        for ((p, q), e) in self.pairs.borrow().iter() {
            let t = e.pose.translation();
            let r = e.pose.rotation().quaternion();
            let _ = writeln!(
                text,
                "{} {} {} {} {} {} {} {} {} {} {} {}",
                self.stamps[p],
                self.stamps[q],
                u8::from(e.valid),
                e.confidence,
                t.x,
                t.y,
                t.z,
                r.i,
                r.j,
                r.k,
                r.w,
                e.pose.scale()
            );
        }
        write_file(&dir.join(PAIRS_FILE), text)
    }
}

impl<P: ReconstructionProvider + ?Sized> ReconstructionProvider for Recorder<'_, P> {
    fn reconstruct_batch(&self, frames: &[FrameRecord]) -> Result<RoomReconstruction, ReconstructionError> {
        let rec = self.inner.reconstruct_batch(frames)?;
        self.batches
            .borrow_mut()
            .push((frames.iter().map(|f| f.id).collect(), rec.clone()));
        Ok(rec)
    }

    fn relative_pose(&self, p: FrameId, q: FrameId) -> Result<RelativePoseEstimate, ReconstructionError> {
        let e = self.inner.relative_pose(p, q)?;
        self.pairs.borrow_mut().insert((p, q), e);
        Ok(e)
    }
}
