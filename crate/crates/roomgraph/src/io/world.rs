//! Simulator metadata: `world.json` describes the generated layout and
//! `sequence.json` the traversal. Worlds are regenerated from their config
//! and seed on load and checked against the stored description.

use std::path::Path;

use roomgraph_core::simulator::{generate_world, ConnectorKind, SequenceSpec, Visit, World, WorldConfig};
use serde::{Deserialize, Serialize};

use super::{read_json, IoError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomDesc {
    pub id: u32,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub door: [f64; 2],
    pub north: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectorDesc {
    pub rooms: [u32; 2],
    pub kind: ConnectorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDesc {
    pub id: u32,
    pub room: u32,
    pub center: [f64; 3],
    pub extent: [f64; 3],
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDoc {
    pub seed: u64,
    pub config: WorldConfig,
    pub rooms: Vec<RoomDesc>,
    pub connectors: Vec<ConnectorDesc>,
    pub objects: Vec<ObjectDesc>,
}

impl WorldDoc {
    pub fn describe(world: &World) -> Self {
        Self {
            seed: world.seed,
            config: world.config.clone(),
            rooms: world
                .rooms
                .iter()
                .map(|r| RoomDesc {
                    id: r.id,
                    min: r.min.into(),
                    max: r.max.into(),
                    door: r.door.into(),
                    north: r.north,
                })
                .collect(),
            connectors: world
                .connectors
                .iter()
                .map(|c| ConnectorDesc {
                    rooms: [c.rooms.0, c.rooms.1],
                    kind: c.kind,
                })
                .collect(),
            objects: world
                .objects
                .iter()
                .map(|o| ObjectDesc {
                    id: o.id,
                    room: o.room,
                    center: o.center.into(),
                    extent: o.extent.into(),
                    label: o.label.clone(),
                })
                .collect(),
        }
    }

    /// Regenerates the world and confirms it matches this description.
    pub fn regenerate(&self) -> Result<World, String> {
        let world = generate_world(&self.config, self.seed).map_err(|e| e.to_string())?;
        if WorldDoc::describe(&world) != *self {
            return Err("description does not match the world generated from its config and seed".into());
        }
        Ok(world)
    }
}

pub fn load_world(path: &Path) -> Result<World, IoError> {
    let doc: WorldDoc = read_json(path)?;
    doc.regenerate().map_err(|e| IoError::invalid(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitDoc {
    pub room: u32,
    pub start: usize,
    pub end: usize,
}

impl From<&Visit> for VisitDoc {
    fn from(v: &Visit) -> Self {
        Self {
            room: v.room,
            start: v.start,
            end: v.end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceDoc {
    pub spec: SequenceSpec,
    pub visits: Vec<VisitDoc>,
    /// Ground-truth room of every frame, `null` inside connectors.
    pub gt_rooms: Vec<Option<u32>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn description_regenerates() {
        let world = generate_world(
            &WorldConfig {
                rooms: 3,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let doc = WorldDoc::describe(&world);
        let json = serde_json::to_string(&doc).unwrap();
        let back: WorldDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(back.regenerate().unwrap(), world);
        let mut edited = doc;
        edited.rooms[0].max[0] += 1.0;
        assert!(edited.regenerate().is_err());
    }
}
