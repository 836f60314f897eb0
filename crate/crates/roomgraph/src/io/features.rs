//! Per-frame feature matrix: `features.bin` holds little-endian `f32`
//! rows, `features.json` the dimension and the id and timestamp of each
//! row.

use std::path::Path;

use roomgraph_core::scene_graph::FrameId;
use roomgraph_core::Embedding;
use serde::{Deserialize, Serialize};

use super::{read_bytes, read_json, write_file, write_json, IoError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureHeader {
    pub dim: usize,
    pub frame_ids: Vec<FrameId>,
    pub timestamps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub id: FrameId,
    pub timestamp: f64,
    pub feature: Embedding,
}

pub fn write(bin: &Path, header: &Path, rows: &[FeatureRow]) -> Result<(), IoError> {
    let dim = rows.first().map_or(0, |r| r.feature.dim());
    if let Some(r) = rows.iter().find(|r| r.feature.dim() != dim) {
        return Err(IoError::invalid(
            bin,
            format!("frame {} has dimension {}, expected {dim}", r.id, r.feature.dim()),
        ));
    }
    let mut bytes = Vec::with_capacity(rows.len() * dim * 4);
    for r in rows {
        for v in r.feature.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(bin, bytes)?;
    write_json(
        header,
        &FeatureHeader {
            dim,
            frame_ids: rows.iter().map(|r| r.id).collect(),
            timestamps: rows.iter().map(|r| r.timestamp).collect(),
        },
    )
}

pub fn read(bin: &Path, header: &Path) -> Result<Vec<FeatureRow>, IoError> {
    let h: FeatureHeader = read_json(header)?;
    if h.frame_ids.len() != h.timestamps.len() {
        return Err(IoError::invalid(header, "frame_ids and timestamps differ in length"));
    }
    if h.dim == 0 && !h.frame_ids.is_empty() {
        return Err(IoError::invalid(header, "dim must be positive"));
    }
    let bytes = read_bytes(bin)?;
    let expected = h.frame_ids.len() * h.dim * 4;
    if bytes.len() != expected {
        return Err(IoError::invalid(
            bin,
            format!("{} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let mut rows = Vec::with_capacity(h.frame_ids.len());
    for (k, (id, timestamp)) in h.frame_ids.iter().zip(&h.timestamps).enumerate() {
        let row = &bytes[k * h.dim * 4..(k + 1) * h.dim * 4];
        let values: Vec<f32> = row
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let feature = Embedding::from_f32(values).map_err(|e| IoError::invalid(bin, format!("row {k}: {e}")))?;
        rows.push(FeatureRow {
            id: *id,
            timestamp: *timestamp,
            feature,
        });
    }
    Ok(rows)
}
