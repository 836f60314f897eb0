//! Hierarchical scene graph: rooms and objects, room-to-room edges and the
//! room/object containment tree.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::SMatrix;
use thiserror::Error;

use crate::embedding::Embedding;
use crate::geometry::{PointCloud, Sim3};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident($inner:ty), $prefix:literal) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        #[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
        #[cfg_attr(feature = "serde", serde(transparent))]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(RoomId(u32), "r");
id_type!(ObjectId(u32), "o");
id_type!(EdgeId(u32), "e");
id_type!(
    /// Frame index within one input stream.
    FrameId(u64),
    "f"
);

pub type Information = SMatrix<f64, 7, 7>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("room {0} does not exist")]
    MissingRoom(RoomId),
    #[error("object {0} does not exist")]
    MissingObject(ObjectId),
    #[error("edge {0} does not exist")]
    MissingEdge(EdgeId),
    #[error("room id {0} already in use")]
    DuplicateRoom(RoomId),
    #[error("object id {0} already in use")]
    DuplicateObject(ObjectId),
    #[error("edge id {0} already in use")]
    DuplicateEdge(EdgeId),
    #[error("edge connects room {0} to itself")]
    SelfLoop(RoomId),
    #[error("edge between {0} and {1} carries no estimates")]
    NoEstimates(RoomId, RoomId),
    #[error("room {0} is still referenced by {1}")]
    StillReferenced(RoomId, &'static str),
}

/// A room node: reference pose in the world plus everything expressed in
/// the room's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomNode {
    pub reference_pose: Sim3,
    /// Keyframe whose camera defines the local frame.
    pub anchor: FrameId,
    /// Keyframe poses in the local frame.
    pub local_frame_poses: BTreeMap<FrameId, Sim3>,
    pub point_cloud: PointCloud,
    /// Features consulted by loop-closure matching.
    pub frame_features: Vec<Embedding>,
    pub finalized: bool,
}

impl RoomNode {
    pub fn keyframes(&self) -> impl Iterator<Item = FrameId> + '_ {
        self.local_frame_poses.keys().copied()
    }

    pub fn contains_frame(&self, frame: FrameId) -> bool {
        self.local_frame_poses.contains_key(&frame)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectNode {
    pub parent_room: RoomId,
    /// Pose relative to the parent room frame.
    pub pose: Sim3,
    /// Points in the object frame.
    pub point_cloud: PointCloud,
    pub feature: Embedding,
    pub label: String,
    pub support_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EdgeKind {
    Transition,
    LoopClosure,
}

/// A frame pair straddling a room boundary: `frame_p` lives in the edge's
/// source room, `frame_q` in its target room.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransitionPair {
    pub frame_p: FrameId,
    pub frame_q: FrameId,
}

impl TransitionPair {
    pub fn new(frame_p: FrameId, frame_q: FrameId) -> Self {
        Self { frame_p, frame_q }
    }

    pub fn reversed(self) -> Self {
        Self::new(self.frame_q, self.frame_p)
    }
}

/// A set of relative-pose measurements `T_from^-1 T_to` between two rooms.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomEdge {
    pub from: RoomId,
    pub to: RoomId,
    pub estimates: Vec<Sim3>,
    /// Pair that produced each estimate, index-aligned with `estimates`.
    pub pairs: Vec<TransitionPair>,
    pub consensus: Sim3,
    pub kind: EdgeKind,
    pub information: Information,
}

impl RoomEdge {
    pub fn connects(&self, room: RoomId) -> bool {
        self.from == room || self.to == room
    }

    /// The endpoint opposite `room`, if `room` is an endpoint.
    pub fn other(&self, room: RoomId) -> Option<RoomId> {
        if self.from == room {
            Some(self.to)
        } else if self.to == room {
            Some(self.from)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneGraph {
    rooms: BTreeMap<RoomId, RoomNode>,
    objects: BTreeMap<ObjectId, ObjectNode>,
    room_edges: BTreeMap<EdgeId, RoomEdge>,
    next_room: u32,
    next_object: u32,
    next_edge: u32,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rooms(&self) -> &BTreeMap<RoomId, RoomNode> {
        &self.rooms
    }

    pub fn objects(&self) -> &BTreeMap<ObjectId, ObjectNode> {
        &self.objects
    }

    pub fn room_edges(&self) -> &BTreeMap<EdgeId, RoomEdge> {
        &self.room_edges
    }

    /// Containment edges `(room, object)`, one per object.
    pub fn object_edges(&self) -> impl Iterator<Item = (RoomId, ObjectId)> + '_ {
        self.objects.iter().map(|(id, o)| (o.parent_room, *id))
    }

    pub fn room(&self, id: RoomId) -> Result<&RoomNode, GraphError> {
        self.rooms.get(&id).ok_or(GraphError::MissingRoom(id))
    }

    pub fn room_mut(&mut self, id: RoomId) -> Result<&mut RoomNode, GraphError> {
        self.rooms.get_mut(&id).ok_or(GraphError::MissingRoom(id))
    }

    pub fn object(&self, id: ObjectId) -> Result<&ObjectNode, GraphError> {
        self.objects.get(&id).ok_or(GraphError::MissingObject(id))
    }

    pub fn edge(&self, id: EdgeId) -> Result<&RoomEdge, GraphError> {
        self.room_edges.get(&id).ok_or(GraphError::MissingEdge(id))
    }

    /// Id the next `add_room` call will return.
    pub fn next_room_id(&self) -> RoomId {
        RoomId(self.next_room)
    }

    /// Id counters `(room, object, edge)`; ids are never reused.
    pub fn id_counters(&self) -> (u32, u32, u32) {
        (self.next_room, self.next_object, self.next_edge)
    }

    /// Raises the id counters to at least the given values.
    pub fn reserve_ids(&mut self, room: u32, object: u32, edge: u32) {
        self.next_room = self.next_room.max(room);
        self.next_object = self.next_object.max(object);
        self.next_edge = self.next_edge.max(edge);
    }

    pub fn add_room(&mut self, node: RoomNode) -> RoomId {
        let id = RoomId(self.next_room);
        self.next_room += 1;
        self.rooms.insert(id, node);
        id
    }

    pub fn insert_room(&mut self, id: RoomId, node: RoomNode) -> Result<(), GraphError> {
        if self.rooms.contains_key(&id) {
            return Err(GraphError::DuplicateRoom(id));
        }
        self.next_room = self.next_room.max(id.0 + 1);
        self.rooms.insert(id, node);
        Ok(())
    }

    pub fn add_object(&mut self, node: ObjectNode) -> Result<ObjectId, GraphError> {
        let id = ObjectId(self.next_object);
        self.insert_object(id, node)?;
        Ok(id)
    }

    pub fn insert_object(&mut self, id: ObjectId, node: ObjectNode) -> Result<(), GraphError> {
        if !self.rooms.contains_key(&node.parent_room) {
            return Err(GraphError::MissingRoom(node.parent_room));
        }
        if self.objects.contains_key(&id) {
            return Err(GraphError::DuplicateObject(id));
        }
        self.next_object = self.next_object.max(id.0 + 1);
        self.objects.insert(id, node);
        Ok(())
    }

    pub fn add_room_edge(&mut self, edge: RoomEdge) -> Result<EdgeId, GraphError> {
        let id = EdgeId(self.next_edge);
        self.insert_room_edge(id, edge)?;
        Ok(id)
    }

    pub fn insert_room_edge(&mut self, id: EdgeId, edge: RoomEdge) -> Result<(), GraphError> {
        self.validate_edge(&edge)?;
        if self.room_edges.contains_key(&id) {
            return Err(GraphError::DuplicateEdge(id));
        }
        self.next_edge = self.next_edge.max(id.0 + 1);
        self.room_edges.insert(id, edge);
        Ok(())
    }

    fn validate_edge(&self, edge: &RoomEdge) -> Result<(), GraphError> {
        if edge.from == edge.to {
            return Err(GraphError::SelfLoop(edge.from));
        }
        for r in [edge.from, edge.to] {
            if !self.rooms.contains_key(&r) {
                return Err(GraphError::MissingRoom(r));
            }
        }
        if edge.estimates.is_empty() {
            return Err(GraphError::NoEstimates(edge.from, edge.to));
        }
        Ok(())
    }

    /// Removes a room with no incident edges and no children.
    pub fn remove_room(&mut self, id: RoomId) -> Result<RoomNode, GraphError> {
        if !self.rooms.contains_key(&id) {
            return Err(GraphError::MissingRoom(id));
        }
        if self.room_edges.values().any(|e| e.connects(id)) {
            return Err(GraphError::StillReferenced(id, "a room edge"));
        }
        if self.objects.values().any(|o| o.parent_room == id) {
            return Err(GraphError::StillReferenced(id, "an object"));
        }
        Ok(self.rooms.remove(&id).expect("checked above"))
    }

    pub fn remove_room_edge(&mut self, id: EdgeId) -> Result<RoomEdge, GraphError> {
        self.room_edges.remove(&id).ok_or(GraphError::MissingEdge(id))
    }

    /// Edges incident to `room`, in id order.
    pub fn edges_of(&self, room: RoomId) -> impl Iterator<Item = (EdgeId, &RoomEdge)> + '_ {
        self.room_edges
            .iter()
            .filter(move |(_, e)| e.connects(room))
            .map(|(id, e)| (*id, e))
    }

    pub fn neighbors(&self, room: RoomId) -> BTreeSet<RoomId> {
        self.edges_of(room).filter_map(|(_, e)| e.other(room)).collect()
    }

    /// Replaces rooms `old` by `node` in one step. `make_edges` receives the
    /// id the new room will get and returns its edges; they are validated
    /// against the graph without the old rooms before anything changes.
    /// Children of the old rooms move to the new room with their world poses
    /// preserved.
    pub fn replace_rooms(
        &mut self,
        old: &[RoomId],
        node: RoomNode,
        make_edges: impl FnOnce(RoomId) -> Vec<RoomEdge>,
    ) -> Result<RoomId, GraphError> {
        for r in old {
            if !self.rooms.contains_key(r) {
                return Err(GraphError::MissingRoom(*r));
            }
        }
        let new_id = RoomId(self.next_room);
        let edges = make_edges(new_id);
        for e in &edges {
            if e.from == e.to {
                return Err(GraphError::SelfLoop(e.from));
            }
            for r in [e.from, e.to] {
                if r != new_id && (old.contains(&r) || !self.rooms.contains_key(&r)) {
                    return Err(GraphError::MissingRoom(r));
                }
            }
            if e.estimates.is_empty() {
                return Err(GraphError::NoEstimates(e.from, e.to));
            }
        }

        self.room_edges.retain(|_, e| !old.iter().any(|r| e.connects(*r)));
        let new_pose_inv = node.reference_pose.inverse();
        for o in self.objects.values_mut() {
            if old.contains(&o.parent_room) {
                let parent = &self.rooms[&o.parent_room];
                o.pose = new_pose_inv * parent.reference_pose * o.pose;
                o.parent_room = new_id;
            }
        }
        for r in old {
            self.rooms.remove(r);
        }
        self.next_room += 1;
        self.rooms.insert(new_id, node);
        for e in edges {
            let id = EdgeId(self.next_edge);
            self.next_edge += 1;
            self.room_edges.insert(id, e);
        }
        Ok(new_id)
    }

    /// World pose of an object through its parent room.
    pub fn world_pose_of_object(&self, id: ObjectId) -> Result<Sim3, GraphError> {
        let object = self.object(id)?;
        let room = self.room(object.parent_room)?;
        Ok(room.reference_pose * object.pose)
    }

    /// The room layer: room poses and room edges, no objects.
    pub fn room_pose_graph(&mut self) -> RoomPoseGraph<'_> {
        RoomPoseGraph { graph: self }
    }

    /// Checks every structural invariant; used after graph surgery.
    pub fn check_integrity(&self) -> Result<(), GraphError> {
        for e in self.room_edges.values() {
            self.validate_edge(e)?;
        }
        for o in self.objects.values() {
            if !self.rooms.contains_key(&o.parent_room) {
                return Err(GraphError::MissingRoom(o.parent_room));
            }
        }
        Ok(())
    }
}

/// View of the room pose graph. Pose writes go straight to the owning
/// scene graph; objects are not reachable from here.
pub struct RoomPoseGraph<'a> {
    graph: &'a mut SceneGraph,
}

impl RoomPoseGraph<'_> {
    pub fn node_ids(&self) -> impl Iterator<Item = RoomId> + '_ {
        self.graph.rooms.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.graph.rooms.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &RoomEdge)> + '_ {
        self.graph.room_edges.iter().map(|(id, e)| (*id, e))
    }

    pub fn edge_count(&self) -> usize {
        self.graph.room_edges.len()
    }

    pub fn pose(&self, room: RoomId) -> Option<Sim3> {
        self.graph.rooms.get(&room).map(|r| r.reference_pose)
    }

    pub fn set_pose(&mut self, room: RoomId, pose: Sim3) -> Result<(), GraphError> {
        self.graph.room_mut(room)?.reference_pose = pose;
        Ok(())
    }
}
