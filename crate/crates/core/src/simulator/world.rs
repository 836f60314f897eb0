use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DVector, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SimError;
use crate::embedding::Embedding;
use crate::geometry::PointCloud;
use crate::math;
use crate::seed;

const OBJECT_LABELS: [&str; 10] = [
    "chair", "table", "sofa", "bed", "cabinet", "plant", "lamp", "tv", "shelf", "desk",
];

/// Distance of object slot centres from the walls they hug.
const SLOT_MARGIN: f64 = 0.45;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct WorldConfig {
    pub rooms: usize,
    /// Range of room width and depth, meters.
    pub room_size: [f64; 2],
    pub corridor_width: f64,
    /// Spacing between neighbouring rooms on the same side, meters.
    pub room_gap: f64,
    pub wall_height: f64,
    pub door_width: f64,
    /// Wall samples per square meter.
    pub wall_density: f64,
    pub objects_per_room: [usize; 2],
    pub object_extent: [f64; 2],
    pub object_spacing: f64,
    pub feature_dim: usize,
    /// Cosine between each room embedding and the generic room cue.
    pub cue_separability: f64,
    pub max_spine_length: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rooms: 5,
            room_size: [4.0, 6.0],
            corridor_width: 2.0,
            room_gap: 0.5,
            wall_height: 2.5,
            door_width: 1.0,
            wall_density: 400.0,
            objects_per_room: [2, 6],
            object_extent: [0.3, 0.7],
            object_spacing: 0.025,
            feature_dim: 32,
            cue_separability: 0.8,
            max_spine_length: 400.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.rooms < 2 {
            return Err(SimError::Config("at least 2 rooms are required".into()));
        }
        if !(self.room_size[0] >= 3.0 && self.room_size[0] <= self.room_size[1]) {
            return Err(SimError::Config("room_size must satisfy 3 <= min <= max".into()));
        }
        if !(self.corridor_width > 0.0 && self.room_gap >= 0.0 && self.wall_height > 0.0) {
            return Err(SimError::Config(
                "corridor, gap and wall dimensions must be positive".into(),
            ));
        }
        if !(self.door_width > 0.0 && self.door_width < self.room_size[0] - 2.0 * (SLOT_MARGIN + 0.5)) {
            return Err(SimError::Config("door does not fit between the object slots".into()));
        }
        if !(self.wall_density > 0.0 && self.object_spacing > 0.0) {
            return Err(SimError::Config("sampling densities must be positive".into()));
        }
        if self.objects_per_room[0] > self.objects_per_room[1] || self.objects_per_room[1] > 7 {
            return Err(SimError::Config(
                "objects_per_room must be an ordered range within 0..=7".into(),
            ));
        }
        if !(self.object_extent[0] > 0.0
            && self.object_extent[0] <= self.object_extent[1]
            && self.object_extent[1] <= 2.0 * SLOT_MARGIN - 0.1)
        {
            return Err(SimError::Config(
                "object_extent must be an ordered range within (0, 0.8]".into(),
            ));
        }
        if self.rooms + 3 > self.feature_dim {
            return Err(SimError::Config(
                "feature_dim must exceed the room count by at least 3".into(),
            ));
        }
        if !(self.cue_separability > 0.0 && self.cue_separability < 1.0) {
            return Err(SimError::Config("cue_separability must lie in (0, 1)".into()));
        }
        let per_side = self.rooms.div_ceil(2) as f64;
        let spine = per_side * (self.room_size[1] + self.room_gap);
        if spine > self.max_spine_length {
            return Err(SimError::Config(alloc::format!(
                "rooms need up to {spine:.1} m of corridor, limit is {:.1} m",
                self.max_spine_length
            )));
        }
        Ok(())
    }
}

/// An axis-aligned rectangular room on one side of the corridor.
#[derive(Clone, Debug, PartialEq)]
pub struct Room {
    pub id: u32,
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
    /// True when the room lies on the +y side of the corridor.
    pub north: bool,
    /// Door centre, on the corridor-facing wall.
    pub door: Vector2<f64>,
}

impl Room {
    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn size(&self) -> Vector2<f64> {
        self.max - self.min
    }

    /// Closed-rectangle containment.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Unit vector from the door into the room.
    pub fn inward(&self) -> Vector2<f64> {
        if self.north {
            Vector2::y()
        } else {
            -Vector2::y()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConnectorKind {
    Corridor,
}

/// A traversable link between two rooms through their doors.
#[derive(Clone, Debug, PartialEq)]
pub struct Connector {
    pub rooms: (u32, u32),
    pub kind: ConnectorKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldObject {
    pub id: u32,
    pub room: u32,
    pub center: Vector3<f64>,
    pub extent: Vector3<f64>,
    pub feature: Embedding,
    pub label: String,
}

impl WorldObject {
    /// Surface samples on a grid of roughly `spacing`, offset half a cell
    /// from the edges so the set is symmetric about the centre.
    pub fn surface_points(&self, spacing: f64) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        let h = self.extent * 0.5;
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let nu = cells(self.extent[u], spacing);
            let nv = cells(self.extent[v], spacing);
            for sign in [-1.0, 1.0] {
                for i in 0..nu {
                    for j in 0..nv {
                        let mut p = Vector3::zeros();
                        p[axis] = sign * h[axis];
                        p[u] = -h[u] + (i as f64 + 0.5) * self.extent[u] / nu as f64;
                        p[v] = -h[v] + (j as f64 + 0.5) * self.extent[v] / nv as f64;
                        pts.push(self.center + p);
                    }
                }
            }
        }
        pts
    }

    pub fn contains(&self, p: &Vector3<f64>, slack: f64) -> bool {
        (p - self.center)
            .iter()
            .zip(self.extent.iter())
            .all(|(d, e)| d.abs() <= e * 0.5 + slack)
    }
}

fn cells(length: f64, spacing: f64) -> usize {
    (math::floor(length / spacing + 0.5) as usize).max(1)
}

/// Ground-truth semantic embeddings drawn for one world.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldEmbeddings {
    pub room_cue: Embedding,
    pub doorway: Embedding,
    pub corridor: Embedding,
    /// One per room, index-aligned with `World::rooms`.
    pub rooms: Vec<Embedding>,
}

/// A 2D wall segment, used for visibility tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub room: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub rooms: Vec<Room>,
    pub connectors: Vec<Connector>,
    pub walls: Vec<Wall>,
    pub wall_points: PointCloud,
    pub objects: Vec<WorldObject>,
    pub embeddings: WorldEmbeddings,
}

const WORLD_STREAM: u64 = 0x0077_6f72_6c64;

pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World, SimError> {
    config.validate()?;
    let mut rng = seed::rng(seed, [WORLD_STREAM]);
    let half = config.corridor_width * 0.5;

    let mut rooms = Vec::with_capacity(config.rooms);
    let mut cursor = [0.0f64; 2];
    for id in 0..config.rooms as u32 {
        let north = id % 2 == 0;
        let side = usize::from(!north);
        let w = rng.random_range(config.room_size[0]..=config.room_size[1]);
        let d = rng.random_range(config.room_size[0]..=config.room_size[1]);
        let x0 = cursor[side];
        cursor[side] += w + config.room_gap;
        let (y0, y1) = if north { (half, half + d) } else { (-half - d, -half) };
        let door = Vector2::new(x0 + 0.5 * w, if north { half } else { -half });
        rooms.push(Room {
            id,
            min: Vector2::new(x0, y0),
            max: Vector2::new(x0 + w, y1),
            north,
            door,
        });
    }

    let mut connectors = Vec::new();
    for a in 0..rooms.len() as u32 {
        for b in a + 1..rooms.len() as u32 {
            connectors.push(Connector {
                rooms: (a, b),
                kind: ConnectorKind::Corridor,
            });
        }
    }

    let walls = room_walls(&rooms, config.door_width);
    let wall_points = sample_walls(&walls, config);

    let mut objects = Vec::new();
    for room in &rooms {
        let count = rng.random_range(config.objects_per_room[0]..=config.objects_per_room[1]);
        let mut slots = object_slots(room);
        // Partial Fisher-Yates: the first `count` slots are a uniform draw.
        for i in 0..count {
            let j = rng.random_range(i..slots.len());
            slots.swap(i, j);
        }
        for slot in &slots[..count] {
            let extent = Vector3::from_fn(|_, _| rng.random_range(config.object_extent[0]..=config.object_extent[1]));
            let feature = random_unit(&mut rng, config.feature_dim);
            let label = OBJECT_LABELS[rng.random_range(0..OBJECT_LABELS.len())].to_string();
            objects.push(WorldObject {
                id: objects.len() as u32,
                room: room.id,
                center: Vector3::new(slot.x, slot.y, extent.z * 0.5),
                extent,
                feature,
                label,
            });
        }
    }

    let embeddings = draw_embeddings(&mut rng, config);
    Ok(World {
        config: config.clone(),
        seed,
        rooms,
        connectors,
        walls,
        wall_points,
        objects,
        embeddings,
    })
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(e) = Embedding::normalized(&v) {
            return e;
        }
    }
}

fn draw_embeddings<R: Rng>(rng: &mut R, config: &WorldConfig) -> WorldEmbeddings {
    let dim = config.feature_dim;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(config.rooms + 3);
    while basis.len() < config.rooms + 3 {
        let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let n = v.norm();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    let to_emb = |v: &DVector<f64>| Embedding::normalized(v.as_slice()).expect("unit basis vector");
    let c = config.cue_separability;
    let s = math::sqrt(1.0 - c * c);
    let rooms = (0..config.rooms)
        .map(|i| to_emb(&(&basis[0] * c + &basis[3 + i] * s)))
        .collect();
    WorldEmbeddings {
        room_cue: to_emb(&basis[0]),
        doorway: to_emb(&basis[1]),
        corridor: to_emb(&basis[2]),
        rooms,
    }
}

fn object_slots(room: &Room) -> Vec<Vector2<f64>> {
    let m = SLOT_MARGIN;
    let c = room.center();
    let (front, back) = if room.north {
        (room.min.y + m, room.max.y - m)
    } else {
        (room.max.y - m, room.min.y + m)
    };
    let (left, right) = (room.min.x + m, room.max.x - m);
    alloc::vec![
        Vector2::new(left, back),
        Vector2::new(c.x, back),
        Vector2::new(right, back),
        Vector2::new(left, c.y),
        Vector2::new(right, c.y),
        Vector2::new(left, front),
        Vector2::new(right, front),
    ]
}

fn room_walls(rooms: &[Room], door_width: f64) -> Vec<Wall> {
    let mut walls = Vec::new();
    for r in rooms {
        let (lo, hi) = (r.min, r.max);
        let corners = [
            Vector2::new(lo.x, lo.y),
            Vector2::new(hi.x, lo.y),
            Vector2::new(hi.x, hi.y),
            Vector2::new(lo.x, hi.y),
        ];
        let front_y = if r.north { lo.y } else { hi.y };
        for k in 0..4 {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            let is_front = a.y == front_y && b.y == front_y;
            if is_front {
                let (x0, x1) = (a.x.min(b.x), a.x.max(b.x));
                let g0 = r.door.x - door_width * 0.5;
                let g1 = r.door.x + door_width * 0.5;
                walls.push(Wall {
                    a: Vector2::new(x0, front_y),
                    b: Vector2::new(g0, front_y),
                    room: r.id,
                });
                walls.push(Wall {
                    a: Vector2::new(g1, front_y),
                    b: Vector2::new(x1, front_y),
                    room: r.id,
                });
            } else {
                walls.push(Wall { a, b, room: r.id });
            }
        }
    }
    walls
}

fn sample_walls(walls: &[Wall], config: &WorldConfig) -> PointCloud {
    let spacing = 1.0 / math::sqrt(config.wall_density);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for w in walls {
        let len = (w.b - w.a).norm();
        let nu = math::floor(len / spacing) as usize;
        let nz = cells(config.wall_height, spacing);
        let dir = (w.b - w.a) / len;
        for i in 0..nu {
            let p = w.a + dir * ((i as f64 + 0.5) * spacing);
            for k in 0..nz {
                let z = (k as f64 + 0.5) * config.wall_height / nz as f64;
                points.push(Vector3::new(p.x, p.y, z));
                labels.push(w.room);
            }
        }
    }
    PointCloud::with_labels(points, labels).expect("finite wall samples")
}

impl World {
    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.get(id as usize).filter(|r| r.id == id)
    }

    /// Room whose closed rectangle contains `p`, if any.
    pub fn room_at(&self, p: &Vector2<f64>) -> Option<u32> {
        self.rooms.iter().find(|r| r.contains(p)).map(|r| r.id)
    }

    pub fn connected(&self, a: u32, b: u32) -> bool {
        self.connectors.iter().any(|c| c.rooms == (a, b) || c.rooms == (b, a))
    }

    pub fn objects_in(&self, room: u32) -> impl Iterator<Item = &WorldObject> + '_ {
        self.objects.iter().filter(move |o| o.room == room)
    }

    /// Wall and object surface samples of one room, world frame.
    pub fn room_surface(&self, room: u32) -> Vec<Vector3<f64>> {
        let labels = self.wall_points.labels().expect("wall points are labeled");
        let mut pts: Vec<_> = self
            .wall_points
            .points()
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == room)
            .map(|(p, _)| *p)
            .collect();
        for o in self.objects_in(room) {
            pts.extend(o.surface_points(self.config.object_spacing));
        }
        pts
    }

    /// Ground-truth cloud of every room surface labelled by room id.
    pub fn ground_truth_cloud(&self) -> PointCloud {
        let mut cloud = PointCloud::default();
        for r in &self.rooms {
            let pts = self.room_surface(r.id);
            cloud.extend(&PointCloud::labeled_uniform(pts, r.id).expect("finite samples"));
        }
        cloud
    }

    /// True when the straight segment between two floor positions crosses
    /// no wall. Door gaps are open.
    pub fn line_of_sight(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
        !self.walls.iter().any(|w| segments_cross(a, b, &w.a, &w.b))
    }
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_cross(p: &Vector2<f64>, q: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let d1 = cross2(&(b - a), &(p - a));
    let d2 = cross2(&(b - a), &(q - a));
    let d3 = cross2(&(q - p), &(a - p));
    let d4 = cross2(&(q - p), &(b - p));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}
