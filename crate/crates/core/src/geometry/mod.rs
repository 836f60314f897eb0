//! Sim(3) poses, point clouds, trajectories, alignment and the metric
//! primitives shared by the rest of the crate.

mod align;
mod cloud;
mod kdtree;
mod metrics;
mod sim3;
mod trajectory;

pub use align::{umeyama_align, AlignmentMode};
pub use cloud::{PixelCloud, PointCloud};
pub use kdtree::KdTree;
pub use metrics::{associate, ate_rmse, chamfer_distance, AteOptions, ChamferOptions};
pub use sim3::{right_jacobian, right_jacobian_inv, skew, Matrix7, Sim3, Tangent7, Vector7, LOG_BRANCH_MARGIN};
pub use trajectory::Trajectory;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("non-finite value in geometric input")]
    NonFinite,
    #[error("rotation angle {angle} too close to pi for a unique logarithm")]
    LogBranch { angle: f64 },
    #[error("degenerate correspondences: {0}")]
    RankDeficient(&'static str),
    #[error("correspondence count mismatch: {src} vs {dst}")]
    SizeMismatch { src: usize, dst: usize },
    #[error("need at least {needed} correspondences, got {found}")]
    TooFewCorrespondences { found: usize, needed: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("only {associated} timestamp associations, need at least 3")]
    InsufficientOverlap { associated: usize },
    #[error("timestamps must be strictly increasing (index {index})")]
    NonIncreasingTimestamps { index: usize },
    #[error("label count {labels} does not match point count {points}")]
    LabelMismatch { labels: usize, points: usize },
}
