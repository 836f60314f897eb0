//! g2o-style text dump of the room pose graph for cross-checking against
//! external solvers.
//!
//! ```text
//! VERTEX_SIM3:QUAT id tx ty tz qx qy qz qw s
//! EDGE_SIM3:QUAT i j tx ty tz qx qy qz qw s I11 I12 .. I17 I22 .. I77
//! FIX id
//! ```
//!
//! Edge information is the upper triangle of the 7x7 matrix, row-major, in
//! tangent order `[rho, phi, sigma]`. Blank lines and `#` comments are
//! ignored on input.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use nalgebra::Vector3;
use thiserror::Error;

use super::{collect_factors, Factor, FactorMode};
use crate::geometry::Sim3;
use crate::scene_graph::{Information, RoomId, RoomPoseGraph};

pub const VERTEX_TAG: &str = "VERTEX_SIM3:QUAT";
pub const EDGE_TAG: &str = "EDGE_SIM3:QUAT";
pub const FIX_TAG: &str = "FIX";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum G2oError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("edge references unknown vertex {0}")]
    UnknownVertex(RoomId),
    #[error("vertex {0} defined twice")]
    DuplicateVertex(RoomId),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct G2oGraph {
    pub vertices: BTreeMap<RoomId, Sim3>,
    pub edges: Vec<Factor>,
    pub fixed: Vec<RoomId>,
}

fn push_pose(out: &mut String, p: &Sim3) {
    let t = p.translation();
    let q = p.rotation().quaternion();
    let _ = write!(
        out,
        " {} {} {} {} {} {} {} {}",
        t.x,
        t.y,
        t.z,
        q.i,
        q.j,
        q.k,
        q.w,
        p.scale()
    );
}

impl G2oGraph {
    /// Current room poses and the factors `optimize` would use.
    pub fn from_view(view: &RoomPoseGraph<'_>, mode: FactorMode, fixed: &[RoomId]) -> Self {
        Self {
            vertices: view
                .node_ids()
                .filter_map(|id| view.pose(id).map(|p| (id, p)))
                .collect(),
            edges: collect_factors(view, mode),
            fixed: fixed.to_vec(),
        }
    }

    /// Serializes with shortest round-trip float formatting; reading the
    /// output back is exact up to quaternion renormalization.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, pose) in &self.vertices {
            let _ = write!(out, "{VERTEX_TAG} {}", id.0);
            push_pose(&mut out, pose);
            out.push('\n');
        }
        for f in &self.edges {
            let _ = write!(out, "{EDGE_TAG} {} {}", f.i.0, f.j.0);
            push_pose(&mut out, &f.measurement);
            for r in 0..7 {
                for c in r..7 {
                    let _ = write!(out, " {}", f.information[(r, c)]);
                }
            }
            out.push('\n');
        }
        for id in &self.fixed {
            let _ = writeln!(out, "{FIX_TAG} {}", id.0);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, G2oError> {
        let mut graph = G2oGraph::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tokens = content.split_whitespace();
            let tag = tokens.next().unwrap_or_default();
            let rest: Vec<&str> = tokens.collect();
            let err = |reason: String| G2oError::Parse { line, reason };
            let id = |s: &str| -> Result<RoomId, G2oError> {
                s.parse::<u32>()
                    .map(RoomId)
                    .map_err(|_| err(format!("bad vertex id `{s}`")))
            };
            let nums = |s: &[&str]| -> Result<Vec<f64>, G2oError> {
                s.iter()
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                    .collect()
            };
            match tag {
                VERTEX_TAG => {
                    if rest.len() != 9 {
                        return Err(err(format!("vertex needs 9 fields, got {}", rest.len())));
                    }
                    let v = id(rest[0])?;
                    let pose = pose_from(&nums(&rest[1..])?).map_err(err)?;
                    if graph.vertices.insert(v, pose).is_some() {
                        return Err(G2oError::DuplicateVertex(v));
                    }
                }
                EDGE_TAG => {
                    if rest.len() != 38 {
                        return Err(err(format!("edge needs 38 fields, got {}", rest.len())));
                    }
                    let (i, j) = (id(rest[0])?, id(rest[1])?);
                    let values = nums(&rest[2..])?;
                    let measurement = pose_from(&values[..8]).map_err(err)?;
                    let mut information = Information::zeros();
                    let mut k = 8;
                    for r in 0..7 {
                        for c in r..7 {
                            information[(r, c)] = values[k];
                            information[(c, r)] = values[k];
                            k += 1;
                        }
                    }
                    graph.edges.push(Factor {
                        i,
                        j,
                        measurement,
                        information,
                    });
                }
                FIX_TAG => {
                    if rest.len() != 1 {
                        return Err(err(format!("FIX needs 1 field, got {}", rest.len())));
                    }
                    graph.fixed.push(id(rest[0])?);
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        for f in &graph.edges {
            for v in [f.i, f.j] {
                if !graph.vertices.contains_key(&v) {
                    return Err(G2oError::UnknownVertex(v));
                }
            }
        }
        for v in &graph.fixed {
            if !graph.vertices.contains_key(v) {
                return Err(G2oError::UnknownVertex(*v));
            }
        }
        Ok(graph)
    }
}

/// `[tx ty tz qx qy qz qw s]` to a pose.
fn pose_from(v: &[f64]) -> Result<Sim3, String> {
    Sim3::from_wxyz([v[6], v[3], v[4], v[5]], Vector3::new(v[0], v[1], v[2]), v[7]).map_err(|e| format!("{e}"))
}
