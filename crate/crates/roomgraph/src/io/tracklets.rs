//! Mask tracklets as JSON. Masks are run-length encoded as flat
//! `[start, length, start, length, ..]` lists of linear pixel indices on
//! the `width` x `height` grid given in the header.

use std::path::Path;

use roomgraph_core::objects::{MaskObservation, MaskTracklet};
use roomgraph_core::scene_graph::FrameId;
use roomgraph_core::Embedding;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json, IoError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackletFile {
    pub width: u32,
    pub height: u32,
    pub tracklets: Vec<TrackletDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackletDoc {
    pub id: u32,
    pub seed_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_object: Option<u32>,
    pub observations: Vec<ObservationDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationDoc {
    pub frame: FrameId,
    pub rle: Vec<u32>,
    pub feature: Embedding,
}

/// Run-length encoding of a sorted, duplicate-free pixel list.
pub fn encode_rle(mask: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for &p in mask {
        match out.len() {
            n if n >= 2 && out[n - 2] + out[n - 1] == p => out[n - 1] += 1,
            _ => out.extend([p, 1]),
        }
    }
    out
}

/// Expands runs, validating order and bounds against `pixels`.
pub fn decode_rle(rle: &[u32], pixels: u32) -> Result<Vec<u32>, String> {
    if !rle.len().is_multiple_of(2) {
        return Err("run list has odd length".into());
    }
    let mut out: Vec<u32> = Vec::new();
    for run in rle.chunks_exact(2) {
        let (start, len) = (run[0], run[1]);
        let end = start
            .checked_add(len)
            .filter(|e| *e <= pixels)
            .ok_or("run leaves the image")?;
        if out.last().is_some_and(|&last| start <= last) {
            return Err("runs overlap or are out of order".into());
        }
        out.extend(start..end);
    }
    Ok(out)
}

impl TrackletFile {
    pub fn from_tracklets(width: u32, height: u32, tracklets: &[MaskTracklet]) -> Self {
        Self {
            width,
            height,
            tracklets: tracklets
                .iter()
                .map(|t| TrackletDoc {
                    id: t.id,
                    seed_label: t.seed_label.clone(),
                    gt_object: t.gt_object,
                    observations: t
                        .observations
                        .iter()
                        .map(|o| ObservationDoc {
                            frame: o.frame,
                            rle: encode_rle(&o.mask),
                            feature: o.feature.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_tracklets(&self) -> Result<Vec<MaskTracklet>, String> {
        let pixels = self.width.checked_mul(self.height).ok_or("grid is too large")?;
        self.tracklets
            .iter()
            .map(|t| {
                let observations = t
                    .observations
                    .iter()
                    .map(|o| {
                        Ok(MaskObservation {
                            frame: o.frame,
                            mask: decode_rle(&o.rle, pixels)
                                .map_err(|e| format!("tracklet {} frame {}: {e}", t.id, o.frame))?,
                            feature: o.feature.clone(),
                        })
                    })
                    .collect::<Result<_, String>>()?;
                Ok(MaskTracklet {
                    id: t.id,
                    observations,
                    seed_label: t.seed_label.clone(),
                    gt_object: t.gt_object,
                })
            })
            .collect()
    }
}

pub fn write(path: &Path, width: u32, height: u32, tracklets: &[MaskTracklet]) -> Result<(), IoError> {
    write_json(path, &TrackletFile::from_tracklets(width, height, tracklets))
}

pub fn read(path: &Path) -> Result<Vec<MaskTracklet>, IoError> {
    let file: TrackletFile = read_json(path)?;
    file.to_tracklets().map_err(|e| IoError::invalid(path, e))
}
