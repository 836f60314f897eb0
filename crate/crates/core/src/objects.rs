//! Object nodes from multi-view mask tracklets: image-space association by
//! mask overlap, lifting through a room reconstruction, feature averaging.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::Vector3;
use thiserror::Error;

use crate::embedding::{Embedding, EmbeddingError};
use crate::geometry::{PointCloud, Sim3};
use crate::reconstruction::RoomReconstruction;
use crate::scene_graph::{FrameId, GraphError, ObjectId, ObjectNode, RoomId, SceneGraph};

/// One view of a tracked object. Masks are sorted linear pixel indices on
/// the provider's image grid.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskObservation {
    pub frame: FrameId,
    pub mask: Vec<u32>,
    pub feature: Embedding,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskTracklet {
    pub id: u32,
    pub observations: Vec<MaskObservation>,
    pub seed_label: String,
    /// Simulator object the tracklet was generated from.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub gt_object: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ObjectConfig {
    pub iou_threshold: f64,
    pub min_views: usize,
    pub min_points: usize,
    pub voxel_size: f64,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            min_views: 2,
            min_points: 50,
            voxel_size: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("only {found} usable views, need {needed}")]
    TooFewViews { found: usize, needed: usize },
    #[error("only {found} points survive fusion, need {needed}")]
    TooFewPoints { found: usize, needed: usize },
    #[error("observation features: {0}")]
    Feature(#[from] EmbeddingError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedObject {
    /// Fused points in the room frame.
    pub point_cloud: PointCloud,
    /// Object frame in the room frame: centroid, identity rotation, unit scale.
    pub pose: Sim3,
    pub feature: Embedding,
    pub support_count: usize,
    pub label: String,
}

/// Intersection over union of two sorted pixel lists.
pub fn mask_iou(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

fn overlaps(a: &MaskTracklet, b: &MaskTracklet, threshold: f64) -> bool {
    a.observations.iter().any(|oa| {
        b.observations
            .iter()
            .any(|ob| oa.frame == ob.frame && mask_iou(&oa.mask, &ob.mask) >= threshold)
    })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn cmp_observation(a: &MaskObservation, b: &MaskObservation) -> Ordering {
    a.frame.cmp(&b.frame).then_with(|| a.mask.cmp(&b.mask)).then_with(|| {
        a.feature
            .as_slice()
            .iter()
            .zip(b.feature.as_slice())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Merges tracklets that share a frame with mask IoU at or above the
/// threshold, transitively. Each group keeps the smallest member id and its
/// label; observations are the sorted union of the members'.
pub fn merge_tracklets(tracklets: &[MaskTracklet], iou_threshold: f64) -> Vec<MaskTracklet> {
    let n = tracklets.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if find(&mut parent, i) != find(&mut parent, j) && overlaps(&tracklets[i], &tracklets[j], iou_threshold) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<MaskTracklet> = groups
        .into_values()
        .map(|members| {
            let lead = *members
                .iter()
                .min_by_key(|&&i| tracklets[i].id)
                .expect("non-empty group");
            let mut observations: Vec<MaskObservation> = members
                .iter()
                .flat_map(|&i| tracklets[i].observations.iter().cloned())
                .collect();
            observations.sort_by(cmp_observation);
            observations.dedup();
            MaskTracklet {
                id: tracklets[lead].id,
                observations,
                seed_label: tracklets[lead].seed_label.clone(),
                gt_object: tracklets[lead].gt_object,
            }
        })
        .collect();
    out.sort_by_key(|t| t.id);
    out
}

/// Lifts a tracklet into the room frame of `reconstruction`. Observations
/// on frames the reconstruction did not keep are skipped.
pub fn lift_tracklet(
    tracklet: &MaskTracklet,
    reconstruction: &RoomReconstruction,
    config: &ObjectConfig,
) -> Result<LiftedObject, LiftError> {
    let mut raw: Vec<Vector3<f64>> = Vec::new();
    let mut features = Vec::new();
    let mut views = 0;
    for obs in &tracklet.observations {
        let (Some(pose), Some(pixels)) = (
            reconstruction.frame_poses.get(&obs.frame),
            reconstruction.per_frame_points.get(&obs.frame),
        ) else {
            continue;
        };
        let before = raw.len();
        raw.extend(
            obs.mask
                .iter()
                .filter_map(|px| pixels.get(*px))
                .map(|p| pose.transform_point(p)),
        );
        if raw.len() > before {
            views += 1;
            features.push(&obs.feature);
        }
    }
    if views < config.min_views {
        return Err(LiftError::TooFewViews {
            found: views,
            needed: config.min_views,
        });
    }
    let fused = PointCloud::new(raw)
        .expect("finite reconstruction points")
        .voxel_downsample(config.voxel_size);
    if fused.len() < config.min_points {
        return Err(LiftError::TooFewPoints {
            found: fused.len(),
            needed: config.min_points,
        });
    }
    let centroid = fused.centroid().expect("non-empty cloud");
    Ok(LiftedObject {
        point_cloud: fused,
        pose: Sim3::from_translation(centroid),
        feature: Embedding::mean(features)?,
        support_count: views,
        label: tracklet.seed_label.clone(),
    })
}

/// Merges and lifts the tracklets of one room and attaches an object node
/// for each one that survives. Rejected tracklets are skipped silently.
pub fn populate_room(
    graph: &mut SceneGraph,
    room: RoomId,
    tracklets: &[MaskTracklet],
    reconstruction: &RoomReconstruction,
    config: &ObjectConfig,
) -> Result<Vec<ObjectId>, GraphError> {
    graph.room(room)?;
    let mut ids = Vec::new();
    for t in merge_tracklets(tracklets, config.iou_threshold) {
        let Ok(lifted) = lift_tracklet(&t, reconstruction, config) else {
            continue;
        };
        let to_object = lifted.pose.inverse();
        ids.push(graph.add_object(ObjectNode {
            parent_room: room,
            pose: lifted.pose,
            point_cloud: lifted.point_cloud.transformed(&to_object),
            feature: lifted.feature,
            label: lifted.label,
            support_count: lifted.support_count,
        })?);
    }
    Ok(ids)
}
