//! Room-level scene-graph mapping over Sim(3).
//!
//! A monocular frame stream is partitioned into rooms by a hysteresis
//! segmenter, each room is reconstructed once by a pluggable provider,
//! rooms are linked by transition and loop-closure edges, and the room
//! layer is optimized as a Sim(3) pose graph. Objects hang off rooms in
//! room-local frames and follow their parent implicitly.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, timing and
//! the command line live in the `roomgraph` companion crate.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod edges;
pub mod embedding;
pub mod eval;
pub mod geometry;
pub mod loop_closure;
pub mod objects;
pub mod pgo;
pub mod pipeline;
pub mod reconstruction;
pub mod scene_graph;
pub mod segmenter;
pub mod simulator;

mod math;
mod seed;

pub use embedding::Embedding;
pub use geometry::{PointCloud, Sim3, Tangent7, Trajectory};
pub use scene_graph::{EdgeId, FrameId, ObjectId, RoomId, SceneGraph};
