//! TUM trajectory text: `timestamp tx ty tz qx qy qz qw` per line,
//! whitespace separated, `#` comments.
//!
//! Poses from monocular batches carry a scale the format has no column
//! for. It is written as an optional ninth column and read back when
//! present; plain eight-column files load with unit scale.

use std::fmt::Write;
use std::path::Path;

use nalgebra::Vector3;
use roomgraph_core::geometry::{Sim3, Trajectory};

use super::{read_text, write_file, IoError};

pub type StampedPose = (f64, Sim3);

/// Parses TUM lines. Errors carry the 1-based line number.
pub fn parse(text: &str) -> Result<Vec<StampedPose>, (usize, String)> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let v: Vec<f64> = content
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| (line, format!("bad number `{t}`"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 8 && v.len() != 9 {
            return Err((line, format!("expected 8 or 9 fields, got {}", v.len())));
        }
        if !v[0].is_finite() {
            return Err((line, "timestamp is not finite".into()));
        }
        let scale = v.get(8).copied().unwrap_or(1.0);
        let pose = Sim3::from_wxyz([v[7], v[4], v[5], v[6]], Vector3::new(v[1], v[2], v[3]), scale)
            .map_err(|e| (line, e.to_string()))?;
        out.push((v[0], pose));
    }
    Ok(out)
}

/// Formats poses with shortest round-trip floats. The scale column is
/// written only when `with_scale` is set.
pub fn format(poses: &[StampedPose], with_scale: bool) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw");
    out.push_str(if with_scale { " s\n" } else { "\n" });
    for (stamp, p) in poses {
        let t = p.translation();
        let q = p.rotation().quaternion();
        let _ = write!(out, "{stamp} {} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
        if with_scale {
            let _ = write!(out, " {}", p.scale());
        }
        out.push('\n');
    }
    out
}

pub fn read_poses(path: &Path) -> Result<Vec<StampedPose>, IoError> {
    parse(&read_text(path)?).map_err(|(line, reason)| IoError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

/// Reads a trajectory; lines may come in any timestamp order.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    Ok(Trajectory::from_unsorted(read_poses(path)?)?)
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<(), IoError> {
    write_file(path, format(trajectory.poses(), false))
}

pub fn write_poses(path: &Path, poses: &[StampedPose], with_scale: bool) -> Result<(), IoError> {
    write_file(path, format(poses, with_scale))
}
