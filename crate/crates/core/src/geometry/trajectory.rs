use alloc::vec::Vec;

use super::{GeometryError, Sim3};

/// Timestamped poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<(f64, Sim3)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(f64, Sim3)>) -> Result<Self, GeometryError> {
        for (i, w) in poses.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(GeometryError::NonIncreasingTimestamps { index: i + 1 });
            }
        }
        if poses.iter().any(|(t, _)| !t.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { poses })
    }

    /// Sorts by timestamp first; duplicate timestamps keep the first entry.
    pub fn from_unsorted(mut poses: Vec<(f64, Sim3)>) -> Result<Self, GeometryError> {
        poses.sort_by(|a, b| a.0.total_cmp(&b.0));
        poses.dedup_by(|b, a| a.0 == b.0);
        Self::new(poses)
    }

    pub fn poses(&self) -> &[(f64, Sim3)] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Applies `t` on the left of every pose.
    pub fn left_multiplied(&self, t: &Sim3) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|(s, p)| (*s, t * p)).collect(),
        }
    }

    /// Index of the pose closest in time to `stamp` within `tolerance`.
    pub fn nearest(&self, stamp: f64, tolerance: f64) -> Option<usize> {
        let idx = self.poses.partition_point(|(t, _)| *t < stamp);
        let mut best: Option<(usize, f64)> = None;
        for i in [idx.wrapping_sub(1), idx] {
            if let Some((t, _)) = self.poses.get(i) {
                let d = (t - stamp).abs();
                if d <= tolerance && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}
