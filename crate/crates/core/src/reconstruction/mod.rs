//! The per-batch reconstruction interface and its synthetic implementation.
//!
//! A provider turns a batch of frames into camera poses and dense points in
//! one batch-local frame, and answers two-view relative-pose queries.

mod oracle;

use alloc::collections::BTreeMap;
use alloc::string::String;

use thiserror::Error;

use crate::geometry::{PixelCloud, PointCloud, Sim3};
use crate::scene_graph::FrameId;
use crate::segmenter::FrameRecord;

pub use oracle::{OracleNoiseModel, OracleProvider};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconstructionError {
    #[error("a batch needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {0} is unknown to the provider")]
    UnknownFrame(FrameId),
    #[error("reconstruction failed: {0}")]
    Failed(String),
    #[error("invalid provider configuration: {0}")]
    Config(&'static str),
}

/// Output of one batch reconstruction, in the batch-local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomReconstruction {
    /// First frame of the batch; its camera defines the local frame.
    pub anchor: FrameId,
    /// Camera-to-local poses of every batch frame.
    pub frame_poses: BTreeMap<FrameId, Sim3>,
    /// Dense points in the local frame.
    pub points: PointCloud,
    /// Per-pixel points in each frame's camera frame.
    pub per_frame_points: BTreeMap<FrameId, PixelCloud>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePoseEstimate {
    /// `T_p^-1 T_q`: pose of camera q in camera p's frame.
    pub pose: Sim3,
    pub valid: bool,
    pub confidence: f64,
}

impl RelativePoseEstimate {
    pub fn invalid() -> Self {
        Self {
            pose: Sim3::identity(),
            valid: false,
            confidence: 0.0,
        }
    }
}

pub trait ReconstructionProvider {
    fn reconstruct_batch(&self, frames: &[FrameRecord]) -> Result<RoomReconstruction, ReconstructionError>;

    fn relative_pose(&self, p: FrameId, q: FrameId) -> Result<RelativePoseEstimate, ReconstructionError>;
}

impl<P: ReconstructionProvider + ?Sized> ReconstructionProvider for &P {
    fn reconstruct_batch(&self, frames: &[FrameRecord]) -> Result<RoomReconstruction, ReconstructionError> {
        (**self).reconstruct_batch(frames)
    }

    fn relative_pose(&self, p: FrameId, q: FrameId) -> Result<RelativePoseEstimate, ReconstructionError> {
        (**self).relative_pose(p, q)
    }
}
