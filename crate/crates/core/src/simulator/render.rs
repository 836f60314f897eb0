use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

use super::World;
use crate::geometry::{PixelCloud, Sim3};
use crate::math;

/// Pinhole camera used for synthetic masks and per-pixel depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub near: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            focal: 100.0,
            near: 0.1,
        }
    }
}

/// Camera-to-world pose at `position` looking horizontally along `yaw`.
/// Camera axes: x right, y down, z forward.
pub fn camera_pose(position: &Vector3<f64>, yaw: f64) -> Sim3 {
    let (s, c) = (math::sin(yaw), math::cos(yaw));
    let r = Matrix3::from_columns(&[
        Vector3::new(s, -c, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(c, s, 0.0),
    ]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Sim3::new(q, *position, 1.0).expect("unit scale")
}

/// One rendered view: per-pixel camera-frame points and the object each
/// pixel belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub points: PixelCloud,
    /// Pixel indices per object id, sorted.
    pub masks: BTreeMap<u32, Vec<u32>>,
}

/// Z-buffered projection of the object surfaces of the room containing the
/// camera. Cameras outside every room see nothing.
pub fn render_objects(world: &World, camera: &Camera, pose: &Sim3) -> RenderedView {
    let room = world.room_at(&Vector2::new(pose.translation().x, pose.translation().y));
    let inv = pose.inverse();
    let mut zbuf: BTreeMap<u32, (f64, u32, Vector3<f64>)> = BTreeMap::new();
    if let Some(room) = room {
        for obj in world.objects_in(room) {
            for p in obj.surface_points(world.config.object_spacing) {
                let pc = inv.transform_point(&p);
                if pc.z <= camera.near {
                    continue;
                }
                let u = camera.focal * pc.x / pc.z + camera.width as f64 * 0.5;
                let v = camera.focal * pc.y / pc.z + camera.height as f64 * 0.5;
                if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
                    continue;
                }
                let pixel = math::floor(v) as u32 * camera.width + math::floor(u) as u32;
                match zbuf.get(&pixel) {
                    Some((z, _, _)) if *z <= pc.z => {}
                    _ => {
                        zbuf.insert(pixel, (pc.z, obj.id, pc));
                    }
                }
            }
        }
    }
    let mut masks: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut entries = Vec::with_capacity(zbuf.len());
    for (pixel, (_, id, pc)) in zbuf {
        masks.entry(id).or_default().push(pixel);
        entries.push((pixel, pc));
    }
    RenderedView {
        points: PixelCloud::new(camera.width, camera.height, entries),
        masks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_world, WorldConfig};

    #[test]
    fn camera_axes_follow_yaw() {
        let pose = camera_pose(&Vector3::new(1.0, 2.0, 1.2), 0.0);
        let ahead = pose.transform_point(&Vector3::new(0.0, 0.0, 1.0));
        assert!((ahead - Vector3::new(2.0, 2.0, 1.2)).norm() < 1e-12);
        let right = pose.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert!((right - Vector3::new(1.0, 1.0, 1.2)).norm() < 1e-12);
        let down = pose.transform_point(&Vector3::new(0.0, 1.0, 0.0));
        assert!((down - Vector3::new(1.0, 2.0, 0.2)).norm() < 1e-12);
    }

    #[test]
    fn rendered_points_lie_on_visible_objects() {
        let world = generate_world(&WorldConfig::default(), 3).unwrap();
        let room = &world.rooms[0];
        let c = room.center();
        let from = Vector3::new(c.x, c.y - 0.5 * room.size().y + 1.0, 1.2);
        let yaw = math::atan2(c.y - from.y, c.x - from.x);
        let pose = camera_pose(&from, yaw);
        let view = render_objects(&world, &Camera::default(), &pose);
        assert!(!view.points.is_empty());
        for (id, mask) in &view.masks {
            let obj = &world.objects[*id as usize];
            assert_eq!(obj.room, room.id);
            for px in mask {
                let p = pose.transform_point(view.points.get(*px).unwrap());
                assert!(obj.contains(&p, 1e-9));
            }
        }
    }

    #[test]
    fn corridor_cameras_see_nothing() {
        let world = generate_world(&WorldConfig::default(), 3).unwrap();
        let pose = camera_pose(&Vector3::new(world.rooms[0].door.x, 0.0, 1.2), 0.0);
        assert!(render_objects(&world, &Camera::default(), &pose).points.is_empty());
    }
}
