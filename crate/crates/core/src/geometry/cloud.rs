use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::Vector3;

use super::{GeometryError, Sim3};
use crate::math;

/// A set of 3D points with optional per-point integer labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { points, labels: None })
    }

    pub fn with_labels(points: Vec<Vector3<f64>>, labels: Vec<u32>) -> Result<Self, GeometryError> {
        if labels.len() != points.len() {
            return Err(GeometryError::LabelMismatch {
                labels: labels.len(),
                points: points.len(),
            });
        }
        let mut cloud = Self::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    /// Every point gets the same label.
    pub fn labeled_uniform(points: Vec<Vector3<f64>>, label: u32) -> Result<Self, GeometryError> {
        let n = points.len();
        Self::with_labels(points, alloc::vec![label; n])
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &Sim3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn relabeled(&self, label: u32) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            labels: Some(alloc::vec![label; self.points.len()]),
        }
    }

    pub fn without_labels(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            labels: None,
        }
    }

    /// Appends `other`. The result keeps labels only when both sides have them.
    pub fn extend(&mut self, other: &PointCloud) {
        match (&mut self.labels, other.labels.as_ref()) {
            (Some(mine), Some(theirs)) => mine.extend_from_slice(theirs),
            (None, _) if self.points.is_empty() => self.labels = other.labels.clone(),
            (mine, _) => *mine = None,
        }
        self.points.extend_from_slice(&other.points);
    }

    /// Points whose label equals `label`.
    pub fn filter_label(&self, label: u32) -> PointCloud {
        let Some(labels) = &self.labels else {
            return PointCloud::default();
        };
        let points = self
            .points
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == label)
            .map(|(p, _)| *p)
            .collect::<Vec<_>>();
        let n = points.len();
        PointCloud {
            points,
            labels: Some(alloc::vec![label; n]),
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |a, p| a + p);
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }

    /// Replaces the points in each occupied voxel by their mean. Labels keep
    /// the most frequent value per voxel (lowest on ties).
    pub fn voxel_downsample(&self, voxel: f64) -> PointCloud {
        assert!(voxel > 0.0, "voxel size must be positive");
        type Cell = (Vector3<f64>, usize, BTreeMap<u32, usize>);
        let mut cells: BTreeMap<(i64, i64, i64), Cell> = BTreeMap::new();
        for (i, p) in self.points.iter().enumerate() {
            let key = (
                math::floor(p.x / voxel) as i64,
                math::floor(p.y / voxel) as i64,
                math::floor(p.z / voxel) as i64,
            );
            let cell = cells
                .entry(key)
                .or_insert_with(|| (Vector3::zeros(), 0, BTreeMap::new()));
            cell.0 += p;
            cell.1 += 1;
            if let Some(labels) = &self.labels {
                *cell.2.entry(labels[i]).or_insert(0) += 1;
            }
        }
        let mut points = Vec::with_capacity(cells.len());
        let mut labels = Vec::with_capacity(cells.len());
        for (_, (sum, count, votes)) in cells {
            points.push(sum / count as f64);
            if let Some((label, _)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                labels.push(*label);
            }
        }
        PointCloud {
            points,
            labels: self.labels.as_ref().map(|_| labels),
        }
    }
}

/// Per-pixel points of one view on a fixed `width x height` grid, in the
/// camera frame. Pixels are linear indices `row * width + col`, sorted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelCloud {
    pub width: u32,
    pub height: u32,
    pixels: Vec<u32>,
    points: Vec<Vector3<f64>>,
}

impl PixelCloud {
    /// Entries may come in any order; a later duplicate pixel is dropped.
    pub fn new(width: u32, height: u32, mut entries: Vec<(u32, Vector3<f64>)>) -> Self {
        entries.sort_by_key(|e| e.0);
        entries.dedup_by_key(|e| e.0);
        let (pixels, points) = entries.into_iter().unzip();
        Self {
            width,
            height,
            pixels,
            points,
        }
    }

    pub fn get(&self, pixel: u32) -> Option<&Vector3<f64>> {
        self.pixels.binary_search(&pixel).ok().map(|i| &self.points[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Vector3<f64>)> {
        self.pixels.iter().copied().zip(self.points.iter())
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}
