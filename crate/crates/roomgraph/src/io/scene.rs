//! Scene-graph document: `scene_graph.json` plus one PLY per room and
//! object cloud, referenced by relative path.

use std::path::Path;

use nalgebra::Vector3;
use roomgraph_core::geometry::{PointCloud, Sim3};
use roomgraph_core::scene_graph::{
    EdgeId, EdgeKind, FrameId, Information, ObjectId, ObjectNode, RoomEdge, RoomId, RoomNode, SceneGraph,
    TransitionPair,
};
use roomgraph_core::Embedding;
use serde::{Deserialize, Serialize};

use super::{ply, read_json, write_json, IoError};

pub const SCENE_FILE: &str = "scene_graph.json";
pub const VERSION: u32 = 1;

/// A pose as `{q: [w, x, y, z], t: [x, y, z], s}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub q: [f64; 4],
    pub t: [f64; 3],
    pub s: f64,
}

impl From<&Sim3> for PoseDoc {
    fn from(p: &Sim3) -> Self {
        let q = p.rotation().quaternion();
        let t = p.translation();
        Self {
            q: [q.w, q.i, q.j, q.k],
            t: [t.x, t.y, t.z],
            s: p.scale(),
        }
    }
}

impl TryFrom<PoseDoc> for Sim3 {
    type Error = roomgraph_core::geometry::GeometryError;

    fn try_from(d: PoseDoc) -> Result<Self, Self::Error> {
        Sim3::from_wxyz(d.q, Vector3::from(d.t), d.s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeDoc {
    pub frame: FrameId,
    pub pose: PoseDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomDoc {
    pub id: RoomId,
    pub reference_pose: PoseDoc,
    pub anchor: FrameId,
    pub finalized: bool,
    /// PLY path relative to the document.
    pub point_cloud: String,
    pub keyframes: Vec<KeyframeDoc>,
    pub frame_features: Vec<Embedding>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDoc {
    pub id: ObjectId,
    pub parent_room: RoomId,
    pub pose: PoseDoc,
    pub label: String,
    pub support_count: usize,
    pub feature: Embedding,
    pub point_cloud: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub id: EdgeId,
    pub from: RoomId,
    pub to: RoomId,
    pub kind: EdgeKind,
    pub consensus: PoseDoc,
    pub estimates: Vec<PoseDoc>,
    pub pairs: Vec<TransitionPair>,
    /// 7x7 row-major.
    pub information: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEdgeDoc {
    pub room: RoomId,
    pub object: ObjectId,
}

/// Id counters, so a reloaded graph never reissues a retired id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextIds {
    pub room: u32,
    pub object: u32,
    pub edge: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDoc {
    pub version: u32,
    pub rooms: Vec<RoomDoc>,
    pub objects: Vec<ObjectDoc>,
    pub room_edges: Vec<EdgeDoc>,
    pub object_edges: Vec<ObjectEdgeDoc>,
    pub next_ids: NextIds,
}

pub fn room_cloud_path(id: RoomId) -> String {
    format!("rooms/room_{}.ply", id.0)
}

pub fn object_cloud_path(id: ObjectId) -> String {
    format!("objects/object_{}.ply", id.0)
}

impl SceneDoc {
    pub fn from_graph(graph: &SceneGraph) -> Self {
        let (room, object, edge) = graph.id_counters();
        Self {
            version: VERSION,
            rooms: graph
                .rooms()
                .iter()
                .map(|(id, r)| RoomDoc {
                    id: *id,
                    reference_pose: (&r.reference_pose).into(),
                    anchor: r.anchor,
                    finalized: r.finalized,
                    point_cloud: room_cloud_path(*id),
                    keyframes: r
                        .local_frame_poses
                        .iter()
                        .map(|(f, p)| KeyframeDoc {
                            frame: *f,
                            pose: p.into(),
                        })
                        .collect(),
                    frame_features: r.frame_features.clone(),
                })
                .collect(),
            objects: graph
                .objects()
                .iter()
                .map(|(id, o)| ObjectDoc {
                    id: *id,
                    parent_room: o.parent_room,
                    pose: (&o.pose).into(),
                    label: o.label.clone(),
                    support_count: o.support_count,
                    feature: o.feature.clone(),
                    point_cloud: object_cloud_path(*id),
                })
                .collect(),
            room_edges: graph
                .room_edges()
                .iter()
                .map(|(id, e)| EdgeDoc {
                    id: *id,
                    from: e.from,
                    to: e.to,
                    kind: e.kind,
                    consensus: (&e.consensus).into(),
                    estimates: e.estimates.iter().map(PoseDoc::from).collect(),
                    pairs: e.pairs.clone(),
                    information: e.information.transpose().as_slice().to_vec(),
                })
                .collect(),
            object_edges: graph
                .object_edges()
                .map(|(room, object)| ObjectEdgeDoc { room, object })
                .collect(),
            next_ids: NextIds { room, object, edge },
        }
    }

    /// Rebuilds the graph; `cloud` resolves a relative PLY path.
    pub fn to_graph(&self, mut cloud: impl FnMut(&str) -> Result<PointCloud, IoError>) -> Result<SceneGraph, String> {
        if self.version != VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        let pose = |p: PoseDoc| Sim3::try_from(p).map_err(|e| e.to_string());
        let mut graph = SceneGraph::new();
        for r in &self.rooms {
            let node = RoomNode {
                reference_pose: pose(r.reference_pose)?,
                anchor: r.anchor,
                local_frame_poses: r
                    .keyframes
                    .iter()
                    .map(|k| Ok((k.frame, pose(k.pose)?)))
                    .collect::<Result<_, String>>()?,
                point_cloud: cloud(&r.point_cloud).map_err(|e| e.to_string())?,
                frame_features: r.frame_features.clone(),
                finalized: r.finalized,
            };
            graph.insert_room(r.id, node).map_err(|e| e.to_string())?;
        }
        for o in &self.objects {
            let node = ObjectNode {
                parent_room: o.parent_room,
                pose: pose(o.pose)?,
                point_cloud: cloud(&o.point_cloud).map_err(|e| e.to_string())?,
                feature: o.feature.clone(),
                label: o.label.clone(),
                support_count: o.support_count,
            };
            graph.insert_object(o.id, node).map_err(|e| e.to_string())?;
        }
        for e in &self.room_edges {
            if e.information.len() != 49 {
                return Err(format!("edge {}: information needs 49 values", e.id));
            }
            if e.pairs.len() != e.estimates.len() {
                return Err(format!(
                    "edge {}: {} pairs for {} estimates",
                    e.id,
                    e.pairs.len(),
                    e.estimates.len()
                ));
            }
            let edge = RoomEdge {
                from: e.from,
                to: e.to,
                estimates: e.estimates.iter().map(|p| pose(*p)).collect::<Result<_, _>>()?,
                pairs: e.pairs.clone(),
                consensus: pose(e.consensus)?,
                kind: e.kind,
                information: Information::from_row_slice(&e.information),
            };
            graph.insert_room_edge(e.id, edge).map_err(|err| err.to_string())?;
        }
        let listed: Vec<(RoomId, ObjectId)> = self.object_edges.iter().map(|e| (e.room, e.object)).collect();
        let actual: Vec<(RoomId, ObjectId)> = graph.object_edges().collect();
        if listed != actual {
            return Err("object_edges disagree with object parent rooms".into());
        }
        graph.reserve_ids(self.next_ids.room, self.next_ids.object, self.next_ids.edge);
        graph.check_integrity().map_err(|e| e.to_string())?;
        Ok(graph)
    }
}

/// Writes the document and every referenced cloud under `dir`.
pub fn save(dir: &Path, graph: &SceneGraph) -> Result<(), IoError> {
    let doc = SceneDoc::from_graph(graph);
    for (r, node) in doc.rooms.iter().zip(graph.rooms().values()) {
        ply::write(&dir.join(&r.point_cloud), &node.point_cloud)?;
    }
    for (o, node) in doc.objects.iter().zip(graph.objects().values()) {
        ply::write(&dir.join(&o.point_cloud), &node.point_cloud)?;
    }
    write_json(&dir.join(SCENE_FILE), &doc)
}

pub fn load(dir: &Path) -> Result<SceneGraph, IoError> {
    let path = dir.join(SCENE_FILE);
    let doc: SceneDoc = read_json(&path)?;
    doc.to_graph(|rel| ply::read(&dir.join(rel)))
        .map_err(|e| IoError::invalid(&path, e))
}
