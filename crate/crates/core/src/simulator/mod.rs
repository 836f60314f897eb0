//! Deterministic synthetic worlds and frame streams with ground truth.
//!
//! Rooms are axis-aligned rectangles on both sides of a straight corridor.
//! A camera enters each visited room, circles its centre and leaves through
//! the door it came in by; connector segments run door to corridor to door.

mod render;
mod sequence;
mod world;

use alloc::string::String;
use thiserror::Error;

pub use render::{camera_pose, render_objects, Camera, RenderedView};
pub use sequence::{frame_pose, generate_sequence, world_cues, Sequence, SequenceSpec, Visit};
pub use world::{
    generate_world, Connector, ConnectorKind, Room, Wall, World, WorldConfig, WorldEmbeddings, WorldObject,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}
