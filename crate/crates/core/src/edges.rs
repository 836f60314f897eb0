//! Room-to-room edges from frame pairs straddling a boundary, and fusion of
//! their per-pair estimates.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{GeometryError, Sim3, Tangent7};
use crate::reconstruction::{ReconstructionError, ReconstructionProvider};
use crate::scene_graph::{EdgeKind, FrameId, Information, RoomEdge, RoomId, RoomNode};

pub use crate::scene_graph::TransitionPair;

/// Estimates further than this multiple of the median distance from the
/// running mean are dropped.
const OUTLIER_FACTOR: f64 = 3.0;
/// Distances below this count as agreement regardless of the median.
const AGREEMENT_FLOOR: f64 = 1e-9;
const MEAN_MAX_ITERS: usize = 10;
const MEAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EdgeError {
    #[error("room {0} has no keyframes")]
    EmptyBatch(RoomId),
    #[error("at least one frame per side is required")]
    ZeroFrames,
    #[error("frame {frame} has no pose in room {room}")]
    MissingFrame { room: RoomId, frame: FrameId },
    #[error("no valid relative pose between rooms {0} and {1}")]
    AllPairsInvalid(RoomId, RoomId),
    #[error(transparent)]
    Provider(#[from] ReconstructionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Up to `k * k` pairs linking the end of room `i` to the start of room `j`.
///
/// When the rooms share keyframes, the last `min(k, shared)` shared frames
/// form both sides and their self-pairs come first; the sides are topped up
/// to `k` with neighbouring unshared frames. Otherwise the last `k` frames
/// of `i` face the first `k` frames of `j`.
pub fn select_transition_pairs(
    (id_i, room_i): (RoomId, &RoomNode),
    (id_j, room_j): (RoomId, &RoomNode),
    k: usize,
) -> Result<Vec<TransitionPair>, EdgeError> {
    if k == 0 {
        return Err(EdgeError::ZeroFrames);
    }
    let fi: Vec<FrameId> = room_i.keyframes().collect();
    let fj: Vec<FrameId> = room_j.keyframes().collect();
    if fi.is_empty() {
        return Err(EdgeError::EmptyBatch(id_i));
    }
    if fj.is_empty() {
        return Err(EdgeError::EmptyBatch(id_j));
    }
    let shared: Vec<FrameId> = fi.iter().copied().filter(|f| room_j.contains_frame(*f)).collect();

    let (p_side, q_side): (Vec<FrameId>, Vec<FrameId>) = if shared.is_empty() {
        (
            fi[fi.len().saturating_sub(k)..].to_vec(),
            fj[..k.min(fj.len())].to_vec(),
        )
    } else {
        let core = &shared[shared.len().saturating_sub(k)..];
        let first = core[0];
        let last = core[core.len() - 1];
        let mut p: Vec<FrameId> = fi
            .iter()
            .copied()
            .filter(|f| *f < first && !room_j.contains_frame(*f))
            .collect();
        p = p[p.len().saturating_sub(k - core.len())..].to_vec();
        p.extend_from_slice(core);
        let mut q = core.to_vec();
        q.extend(
            fj.iter()
                .copied()
                .filter(|f| *f > last && !room_i.contains_frame(*f))
                .take(k - core.len()),
        );
        (p, q)
    };

    let mut pairs = Vec::with_capacity(p_side.len() * q_side.len());
    let q_set: BTreeSet<FrameId> = q_side.iter().copied().collect();
    for &p in &p_side {
        if q_set.contains(&p) {
            pairs.push(TransitionPair::new(p, p));
        }
    }
    for &p in &p_side {
        for &q in &q_side {
            if p != q {
                pairs.push(TransitionPair::new(p, q));
            }
        }
    }
    Ok(pairs)
}

/// One estimate `L_p * T_pq * L_q^-1` per valid pair, fused into a
/// consensus. Pairs whose relative pose comes back invalid are skipped.
pub fn estimate_transition_edge<P: ReconstructionProvider + ?Sized>(
    (id_i, room_i): (RoomId, &RoomNode),
    (id_j, room_j): (RoomId, &RoomNode),
    pairs: &[TransitionPair],
    provider: &P,
    kind: EdgeKind,
) -> Result<RoomEdge, EdgeError> {
    let mut estimates = Vec::new();
    let mut used = Vec::new();
    for pair in pairs {
        let lp = room_i
            .local_frame_poses
            .get(&pair.frame_p)
            .ok_or(EdgeError::MissingFrame {
                room: id_i,
                frame: pair.frame_p,
            })?;
        let lq = room_j
            .local_frame_poses
            .get(&pair.frame_q)
            .ok_or(EdgeError::MissingFrame {
                room: id_j,
                frame: pair.frame_q,
            })?;
        let rel = provider.relative_pose(pair.frame_p, pair.frame_q)?;
        if !rel.valid {
            continue;
        }
        estimates.push(*lp * rel.pose * lq.inverse());
        used.push(*pair);
    }
    if estimates.is_empty() {
        return Err(EdgeError::AllPairsInvalid(id_i, id_j));
    }
    let consensus = aggregate_edge(&estimates)?;
    Ok(RoomEdge {
        from: id_i,
        to: id_j,
        estimates,
        pairs: used,
        consensus,
        kind,
        information: Information::identity(),
    })
}

fn karcher_mean(estimates: &[Sim3]) -> Result<Sim3, GeometryError> {
    let mut mean = estimates[0];
    for _ in 0..MEAN_MAX_ITERS {
        let mut acc = Tangent7::zero().to_vector();
        for e in estimates {
            acc += (mean.inverse() * *e).log()?.to_vector();
        }
        let step = Tangent7::from_vector(&(acc / estimates.len() as f64));
        mean = mean * Sim3::exp(&step);
        if step.norm() < MEAN_TOL {
            break;
        }
    }
    Ok(mean)
}

/// Geodesic mean with one round of median-based outlier rejection.
pub fn aggregate_edge(estimates: &[Sim3]) -> Result<Sim3, GeometryError> {
    match estimates {
        [] => Err(GeometryError::TooFewCorrespondences { found: 0, needed: 1 }),
        [only] => Ok(*only),
        _ => {
            let mean = karcher_mean(estimates)?;
            let dist: Vec<f64> = estimates
                .iter()
                .map(|e| (mean.inverse() * *e).log().map(|t| t.norm()))
                .collect::<Result<_, _>>()?;
            let mut sorted = dist.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let median = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            };
            let limit = (OUTLIER_FACTOR * median).max(AGREEMENT_FLOOR);
            let kept: Vec<Sim3> = estimates
                .iter()
                .zip(&dist)
                .filter(|(_, d)| **d <= limit)
                .map(|(e, _)| *e)
                .collect();
            if kept.len() == estimates.len() {
                Ok(mean)
            } else {
                karcher_mean(&kept)
            }
        }
    }
}
