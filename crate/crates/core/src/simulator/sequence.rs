use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::render::{camera_pose, render_objects, Camera};
use super::{SimError, World};
use crate::embedding::Embedding;
use crate::geometry::{Sim3, Trajectory};
use crate::math;
use crate::objects::{MaskObservation, MaskTracklet};
use crate::scene_graph::FrameId;
use crate::seed;
use crate::segmenter::{Cue, CueSet, FrameRecord};

/// Distance from the door at which room paths start and end.
const ENTRY_DEPTH: f64 = 0.3;
/// Clearance between the viewing ellipse and the walls.
const ELLIPSE_CLEARANCE: f64 = 1.0;
/// Frames within this distance of a door carry the doorway embedding.
const DOORWAY_RADIUS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SequenceSpec {
    pub visit_order: Vec<u32>,
    pub frames_per_room: usize,
    pub frames_per_connector: usize,
    /// Per-component standard deviation of feature noise.
    pub feature_noise: f64,
    pub rng_seed: u64,
    pub camera_height: f64,
    pub frame_rate: f64,
    pub tracklets: bool,
    /// Masks smaller than this are not reported.
    pub min_mask_pixels: usize,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            visit_order: alloc::vec![0, 1, 2, 3, 4],
            frames_per_room: 80,
            frames_per_connector: 12,
            feature_noise: 0.05,
            rng_seed: 0,
            camera_height: 1.2,
            frame_rate: 10.0,
            tracklets: true,
            min_mask_pixels: 20,
        }
    }
}

/// One stay inside a room: frame indices `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Visit {
    pub room: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<FrameRecord>,
    pub ground_truth: Trajectory,
    pub tracklets: Vec<MaskTracklet>,
    pub cues: CueSet,
    pub visits: Vec<Visit>,
}

impl Sequence {
    /// Number of connector traversals, i.e. true room transitions.
    pub fn transitions(&self) -> usize {
        self.visits.len().saturating_sub(1)
    }
}

/// The cue set matching a world's embeddings.
pub fn world_cues(world: &World) -> CueSet {
    let e = &world.embeddings;
    CueSet {
        transition: alloc::vec![
            Cue {
                label: "doorway".to_string(),
                embedding: e.doorway.clone()
            },
            Cue {
                label: "corridor".to_string(),
                embedding: e.corridor.clone()
            },
        ],
        room: alloc::vec![Cue {
            label: "room".to_string(),
            embedding: e.room_cue.clone()
        }],
    }
}

enum Place {
    Room(u32),
    Connector(Vector2<f64>, Vector2<f64>),
}

pub fn generate_sequence(world: &World, spec: &SequenceSpec) -> Result<Sequence, SimError> {
    validate(world, spec)?;
    let mut rng = seed::rng(spec.rng_seed, [world.seed, 0x0073_6571]);
    let noise = Normal::new(0.0, spec.feature_noise.max(0.0))
        .map_err(|_| SimError::Config("feature_noise must be finite".into()))?;

    let mut samples: Vec<(Vector2<f64>, f64, Place)> = Vec::new();
    let mut visits = Vec::new();
    for (k, &room_id) in spec.visit_order.iter().enumerate() {
        let room = world.room(room_id).expect("validated");
        if k > 0 {
            let prev = world.room(spec.visit_order[k - 1]).expect("validated");
            let path = [
                prev.door,
                Vector2::new(prev.door.x, 0.0),
                Vector2::new(room.door.x, 0.0),
                room.door,
            ];
            for (p, yaw) in polyline_interior(&path, spec.frames_per_connector) {
                samples.push((p, yaw, Place::Connector(prev.door, room.door)));
            }
        }
        let start = samples.len();
        for (p, yaw) in room_path(room, spec.frames_per_room) {
            samples.push((p, yaw, Place::Room(room_id)));
        }
        visits.push(Visit {
            room: room_id,
            start,
            end: samples.len(),
        });
    }

    let emb = &world.embeddings;
    let mut frames = Vec::with_capacity(samples.len());
    let mut poses = Vec::with_capacity(samples.len());
    for (i, (p, yaw, place)) in samples.iter().enumerate() {
        let base = match place {
            Place::Room(r) => &emb.rooms[*r as usize],
            Place::Connector(da, db) => {
                if (p - da).norm() <= DOORWAY_RADIUS || (p - db).norm() <= DOORWAY_RADIUS {
                    &emb.doorway
                } else {
                    &emb.corridor
                }
            }
        };
        let feature = perturb(base, &noise, &mut rng);
        let pose = camera_pose(&Vector3::new(p.x, p.y, spec.camera_height), *yaw);
        let timestamp = i as f64 / spec.frame_rate;
        poses.push((timestamp, pose));
        frames.push(FrameRecord {
            id: FrameId(i as u64),
            timestamp,
            feature,
            gt_pose: Some(pose),
            gt_room: world.room_at(p),
        });
    }

    let tracklets = if spec.tracklets {
        make_tracklets(world, spec, &frames, &visits, &noise, &mut rng)
    } else {
        Vec::new()
    };
    Ok(Sequence {
        frames,
        ground_truth: Trajectory::new(poses).expect("increasing timestamps"),
        tracklets,
        cues: world_cues(world),
        visits,
    })
}

fn validate(world: &World, spec: &SequenceSpec) -> Result<(), SimError> {
    if spec.visit_order.is_empty() {
        return Err(SimError::Config("visit_order is empty".into()));
    }
    for &r in &spec.visit_order {
        if world.room(r).is_none() {
            return Err(SimError::Config(alloc::format!("visit_order names unknown room {r}")));
        }
    }
    for w in spec.visit_order.windows(2) {
        if !world.connected(w[0], w[1]) {
            return Err(SimError::Config(alloc::format!(
                "rooms {} and {} are not connected",
                w[0],
                w[1]
            )));
        }
    }
    if spec.frames_per_room < 2 {
        return Err(SimError::Config("frames_per_room must be at least 2".into()));
    }
    if !(spec.frame_rate > 0.0) || !(spec.camera_height > 0.0) {
        return Err(SimError::Config("frame_rate and camera_height must be positive".into()));
    }
    Ok(())
}

fn perturb<R: Rng>(base: &Embedding, noise: &Normal<f64>, rng: &mut R) -> Embedding {
    loop {
        let v: Vec<f64> = base.as_slice().iter().map(|&b| b as f64 + noise.sample(rng)).collect();
        if let Ok(e) = Embedding::normalized(&v) {
            return e;
        }
    }
}

/// `n` samples strictly inside a polyline, equally spaced by arc length,
/// each with the heading of its segment.
fn polyline_interior(path: &[Vector2<f64>], n: usize) -> Vec<(Vector2<f64>, f64)> {
    let segs: Vec<(Vector2<f64>, Vector2<f64>, f64)> = path
        .windows(2)
        .map(|w| (w[0], w[1], (w[1] - w[0]).norm()))
        .filter(|s| s.2 > 1e-9)
        .collect();
    let total: f64 = segs.iter().map(|s| s.2).sum();
    (0..n)
        .map(|i| {
            let mut s = (i + 1) as f64 * total / (n + 1) as f64;
            for (a, b, len) in &segs {
                if s <= *len {
                    let d = (b - a) / *len;
                    return (a + d * s, math::atan2(d.y, d.x));
                }
                s -= len;
            }
            let (a, b, len) = segs.last().expect("non-degenerate connector");
            let d = (b - a) / *len;
            (*b, math::atan2(d.y, d.x))
        })
        .collect()
}

/// Entry point, ellipse loop around the room centre and back, sampled at
/// equal arc length, always looking at the centre.
fn room_path(room: &crate::simulator::Room, n: usize) -> Vec<(Vector2<f64>, f64)> {
    let c = room.center();
    let a = (room.size().x * 0.5 - ELLIPSE_CLEARANCE).max(0.25);
    let b = (room.size().y * 0.5 - ELLIPSE_CLEARANCE).max(0.25);
    let inward = room.inward();
    let p0 = room.door + inward * ENTRY_DEPTH;
    let theta0 = if room.north { -0.5 * math::PI } else { 0.5 * math::PI };

    const STEPS: usize = 720;
    let mut pts = Vec::with_capacity(STEPS + 3);
    pts.push(p0);
    for k in 0..=STEPS {
        let t = theta0 + 2.0 * math::PI * k as f64 / STEPS as f64;
        pts.push(c + Vector2::new(a * math::cos(t), b * math::sin(t)));
    }
    pts.push(p0);
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut seg = 0;
    (0..n)
        .map(|i| {
            let s = total * i as f64 / (n - 1) as f64;
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let f = if len > 0.0 {
                ((s - cum[seg]) / len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let p = pts[seg] + (pts[seg + 1] - pts[seg]) * f;
            let look = c - p;
            (p, math::atan2(look.y, look.x))
        })
        .collect()
}

fn make_tracklets<R: Rng>(
    world: &World,
    spec: &SequenceSpec,
    frames: &[FrameRecord],
    visits: &[Visit],
    noise: &Normal<f64>,
    rng: &mut R,
) -> Vec<MaskTracklet> {
    let camera = Camera::default();
    let mut out = Vec::new();
    for visit in visits {
        let mut per_object: BTreeMap<u32, Vec<(FrameId, Vec<u32>)>> = BTreeMap::new();
        for f in &frames[visit.start..visit.end] {
            let view = render_objects(world, &camera, f.gt_pose.as_ref().expect("simulated pose"));
            for (obj, mask) in view.masks {
                if mask.len() >= spec.min_mask_pixels {
                    per_object.entry(obj).or_default().push((f.id, mask));
                }
            }
        }
        for (obj, views) in per_object {
            let object = &world.objects[obj as usize];
            let n = views.len();
            let pieces: Vec<(usize, usize)> = if n >= 5 {
                let len = (3 * n).div_ceil(5);
                alloc::vec![(0, len), (n - len, n)]
            } else {
                alloc::vec![(0, n)]
            };
            for (a, b) in pieces {
                let observations = views[a..b]
                    .iter()
                    .map(|(frame, mask)| MaskObservation {
                        frame: *frame,
                        mask: mask.clone(),
                        feature: perturb(&object.feature, noise, rng),
                    })
                    .collect();
                out.push(MaskTracklet {
                    id: out.len() as u32,
                    observations,
                    seed_label: object.label.clone(),
                    gt_object: Some(obj),
                });
            }
        }
    }
    out
}

/// Ground-truth world pose of a frame, when known.
pub fn frame_pose(frames: &[FrameRecord], id: FrameId) -> Option<Sim3> {
    frames
        .binary_search_by_key(&id, |f| f.id)
        .ok()
        .and_then(|i| frames[i].gt_pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::score_frame;
    use crate::simulator::{generate_world, WorldConfig};

    fn quiet(order: &[u32]) -> SequenceSpec {
        SequenceSpec {
            visit_order: order.to_vec(),
            feature_noise: 0.0,
            tracklets: false,
            ..Default::default()
        }
    }

    #[test]
    fn stream_length_counts_rooms_and_connectors() {
        let w = generate_world(&WorldConfig::default(), 1).unwrap();
        let s = generate_sequence(&w, &quiet(&[0, 1, 2, 3, 4])).unwrap();
        assert_eq!(s.frames.len(), 5 * 80 + 4 * 12);
        assert_eq!(s.transitions(), 4);
    }

    #[test]
    fn noiseless_labels_match_membership() {
        let w = generate_world(&WorldConfig::default(), 2).unwrap();
        let s = generate_sequence(&w, &quiet(&[0, 1, 2, 3, 4])).unwrap();
        for f in &s.frames {
            let score = score_frame(&f.feature, &s.cues).unwrap();
            assert_eq!(score.is_transition, f.gt_room.is_none(), "frame {}", f.id);
        }
    }

    #[test]
    fn gt_room_matches_geometric_containment() {
        let w = generate_world(&WorldConfig::default(), 3).unwrap();
        let s = generate_sequence(&w, &quiet(&[0, 1, 2, 0])).unwrap();
        for v in &s.visits {
            for f in &s.frames[v.start..v.end] {
                assert_eq!(f.gt_room, Some(v.room));
            }
        }
        for f in &s.frames {
            let p = f.gt_pose.unwrap();
            assert_eq!(f.gt_room, w.room_at(&p.translation().xy()));
        }
    }

    #[test]
    fn revisit_order_produces_a_revisit() {
        let w = generate_world(&WorldConfig::default(), 4).unwrap();
        let s = generate_sequence(&w, &quiet(&[0, 1, 0])).unwrap();
        let rooms: Vec<u32> = s.visits.iter().map(|v| v.room).collect();
        assert_eq!(rooms, [0, 1, 0]);
    }

    #[test]
    fn deterministic_under_seed() {
        let w = generate_world(&WorldConfig::default(), 5).unwrap();
        let spec = SequenceSpec {
            visit_order: alloc::vec![0, 1],
            ..Default::default()
        };
        assert_eq!(
            generate_sequence(&w, &spec).unwrap(),
            generate_sequence(&w, &spec).unwrap()
        );
    }

    #[test]
    fn unconnected_or_unknown_rooms_are_rejected() {
        let w = generate_world(&WorldConfig::default(), 5).unwrap();
        assert!(generate_sequence(&w, &quiet(&[0, 0])).is_err());
        assert!(generate_sequence(&w, &quiet(&[0, 9])).is_err());
    }

    #[test]
    fn tracklets_cover_objects_in_fragments() {
        let w = generate_world(&WorldConfig::default(), 6).unwrap();
        let spec = SequenceSpec {
            visit_order: alloc::vec![0],
            ..Default::default()
        };
        let s = generate_sequence(&w, &spec).unwrap();
        for t in &s.tracklets {
            assert!(!t.observations.is_empty());
            let obj = t.gt_object.unwrap();
            assert_eq!(w.objects[obj as usize].room, 0);
        }
        let seen: alloc::collections::BTreeSet<u32> = s.tracklets.iter().filter_map(|t| t.gt_object).collect();
        assert_eq!(seen.len(), w.objects_in(0).count());
    }
}
