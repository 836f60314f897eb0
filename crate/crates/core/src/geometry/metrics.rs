use alloc::vec::Vec;

use nalgebra::Vector3;

use super::{umeyama_align, AlignmentMode, GeometryError, KdTree, PointCloud, Sim3, Trajectory};
use crate::math;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChamferOptions {
    /// Nearest-neighbour distances are clamped to this value when set.
    pub truncation: Option<f64>,
}

/// Symmetric mean nearest-neighbour distance between two clouds already
/// expressed in the same frame.
pub fn chamfer_distance(pred: &PointCloud, gt: &PointCloud, options: ChamferOptions) -> Result<f64, GeometryError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let pred_to_gt = mean_nn(pred.points(), &KdTree::new(gt.points()), options.truncation);
    let gt_to_pred = mean_nn(gt.points(), &KdTree::new(pred.points()), options.truncation);
    Ok(0.5 * (pred_to_gt + gt_to_pred))
}

fn mean_nn(queries: &[Vector3<f64>], tree: &KdTree, truncation: Option<f64>) -> f64 {
    let sum: f64 = queries
        .iter()
        .map(|q| {
            let d = math::sqrt(tree.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2));
            truncation.map_or(d, |t| d.min(t))
        })
        .sum();
    sum / queries.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AteOptions {
    pub alignment: AlignmentMode,
    /// Maximum timestamp difference for an association, seconds.
    pub max_time_diff: f64,
}

impl Default for AteOptions {
    fn default() -> Self {
        Self {
            alignment: AlignmentMode::Sim3,
            max_time_diff: 0.02,
        }
    }
}

/// Pairs `(est index, gt index)` matched by nearest timestamp.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_time_diff: f64) -> Vec<(usize, usize)> {
    est.poses()
        .iter()
        .enumerate()
        .filter_map(|(i, (t, _))| gt.nearest(*t, max_time_diff).map(|j| (i, j)))
        .collect()
}

/// Translation RMSE after alignment, together with the alignment applied to
/// the estimate.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, options: AteOptions) -> Result<(f64, Sim3), GeometryError> {
    let pairs = associate(est, gt, options.max_time_diff);
    if pairs.len() < 3 {
        return Err(GeometryError::InsufficientOverlap {
            associated: pairs.len(),
        });
    }
    let src: Vec<_> = pairs.iter().map(|(i, _)| *est.poses()[*i].1.translation()).collect();
    let dst: Vec<_> = pairs.iter().map(|(_, j)| *gt.poses()[*j].1.translation()).collect();
    let align = match options.alignment {
        AlignmentMode::None => Sim3::identity(),
        AlignmentMode::Se3 => umeyama_align(&src, &dst, false)?,
        AlignmentMode::Sim3 => umeyama_align(&src, &dst, true)?,
    };
    let sq: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (d - align.transform_point(s)).norm_squared())
        .sum();
    Ok((math::sqrt(sq / src.len() as f64), align))
}
