//! Levenberg-Marquardt optimisation of the room pose graph over Sim(3).
//!
//! Residual convention: `r = log(Z^-1 * T_i^-1 * T_j)` with poses perturbed
//! on the right, `T <- T * exp(delta)`.

pub mod g2o;
mod solve;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DVector;
use thiserror::Error;

use crate::geometry::{right_jacobian_inv, GeometryError, Matrix7, Sim3, Tangent7, Vector7};
use crate::scene_graph::{GraphError, Information, RoomId, RoomPoseGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PgoError {
    #[error("{rooms} rooms but no factors: poses are unconstrained")]
    Unconstrained { rooms: usize },
    #[error("anchor room {0} is not in the graph")]
    MissingAnchor(RoomId),
    #[error("normal equations are singular beyond the gauge")]
    Singular,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One relative-pose measurement between two rooms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor {
    pub i: RoomId,
    pub j: RoomId,
    pub measurement: Sim3,
    pub information: Information,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FactorMode {
    /// One factor per raw estimate on each edge.
    PerEstimate,
    /// One factor per edge from its consensus transform.
    Consensus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PgoConfig {
    pub max_iters: usize,
    pub lambda_init: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tol: f64,
    /// Stop when the step norm falls below this.
    pub step_tol: f64,
    /// Fixed room; by default the lowest id of each connected component.
    pub anchor: Option<RoomId>,
    pub factor_mode: FactorMode,
    /// Huber threshold on the whitened residual norm; off when unset.
    pub huber: Option<f64>,
    /// Largest variable count solved densely; beyond it a preconditioned
    /// conjugate-gradient solver runs on the block-sparse system.
    pub dense_limit: usize,
}

impl Default for PgoConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            lambda_init: 1e-4,
            cost_tol: 1e-12,
            step_tol: 1e-12,
            anchor: None,
            factor_mode: FactorMode::PerEstimate,
            huber: None,
            dense_limit: 200,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptReport {
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Damping used at each iteration.
    pub lambdas: Vec<f64>,
    /// Cost after each accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
    pub factors: usize,
    pub anchors: Vec<RoomId>,
}

pub fn residual(factor: &Factor, ti: &Sim3, tj: &Sim3) -> Result<Tangent7, GeometryError> {
    (factor.measurement.inverse() * ti.inverse() * *tj).log()
}

/// Jacobians of the residual with respect to right perturbations of
/// `T_i` and `T_j`.
pub fn jacobians(factor: &Factor, ti: &Sim3, tj: &Sim3) -> Result<(Tangent7, Matrix7, Matrix7), GeometryError> {
    let r = residual(factor, ti, tj)?;
    let jr_inv = right_jacobian_inv(&r);
    let ji = -jr_inv * (tj.inverse() * *ti).adjoint();
    Ok((r, ji, jr_inv))
}

/// Largest absolute difference between the analytic Jacobians and central
/// differences with step `1e-6` over all 14 tangent coordinates.
pub fn numeric_jacobian_check(factor: &Factor, ti: &Sim3, tj: &Sim3) -> Result<f64, GeometryError> {
    const H: f64 = 1e-6;
    let (_, ji, jj) = jacobians(factor, ti, tj)?;
    let mut worst: f64 = 0.0;
    for k in 0..14 {
        let mut d = Vector7::zeros();
        d[k % 7] = H;
        let plus = Sim3::exp(&Tangent7::from_vector(&d));
        let minus = Sim3::exp(&Tangent7::from_vector(&-d));
        let (rp, rm) = if k < 7 {
            (
                residual(factor, &(*ti * plus), tj)?,
                residual(factor, &(*ti * minus), tj)?,
            )
        } else {
            (
                residual(factor, ti, &(*tj * plus))?,
                residual(factor, ti, &(*tj * minus))?,
            )
        };
        let numeric = (rp.to_vector() - rm.to_vector()) / (2.0 * H);
        let analytic = if k < 7 { ji.column(k) } else { jj.column(k - 7) };
        worst = worst.max((numeric - analytic).amax());
    }
    Ok(worst)
}

/// Factors of the room layer under the chosen mode.
pub fn collect_factors(view: &RoomPoseGraph<'_>, mode: FactorMode) -> Vec<Factor> {
    let mut out = Vec::new();
    for (_, e) in view.edges() {
        match mode {
            FactorMode::PerEstimate => out.extend(e.estimates.iter().map(|m| Factor {
                i: e.from,
                j: e.to,
                measurement: *m,
                information: e.information,
            })),
            FactorMode::Consensus => out.push(Factor {
                i: e.from,
                j: e.to,
                measurement: e.consensus,
                information: e.information,
            }),
        }
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

struct Problem<'a> {
    factors: &'a [(usize, usize, Factor)],
    /// Variable slot per node, `None` for anchors.
    slot: Vec<Option<usize>>,
    huber: Option<f64>,
}

impl Problem<'_> {
    fn robust(&self, r: &Tangent7, info: &Information) -> (f64, f64) {
        let v = r.to_vector();
        let sq = (v.transpose() * info * v)[0].max(0.0);
        match self.huber {
            Some(k) if sq > k * k => {
                let n = crate::math::sqrt(sq);
                (2.0 * k * n - k * k, k / n)
            }
            _ => (sq, 1.0),
        }
    }

    fn cost(&self, poses: &[Sim3]) -> Result<f64, GeometryError> {
        let mut c = 0.0;
        for (a, b, f) in self.factors {
            let r = residual(f, &poses[*a], &poses[*b])?;
            c += self.robust(&r, &f.information).0;
        }
        Ok(c)
    }

    fn linearize(&self, poses: &[Sim3], sys: &mut solve::BlockSystem) -> Result<(), GeometryError> {
        sys.clear();
        for (a, b, f) in self.factors {
            let (r, ja, jb) = jacobians(f, &poses[*a], &poses[*b])?;
            let w = self.robust(&r, &f.information).1;
            let omega = f.information * w;
            let rv = r.to_vector();
            let blocks = [(self.slot[*a], ja), (self.slot[*b], jb)];
            for (sa, jx) in &blocks {
                let Some(sa) = sa else { continue };
                sys.add_gradient(*sa, &(jx.transpose() * omega * rv));
                for (sb, jy) in &blocks {
                    let Some(sb) = sb else { continue };
                    sys.add_block(*sa, *sb, &(jx.transpose() * omega * jy));
                }
            }
        }
        Ok(())
    }
}

/// Optimises room reference poses in place. Components without factors
/// are left alone; each component is anchored at one fixed room.
pub fn optimize(view: &mut RoomPoseGraph<'_>, config: &PgoConfig) -> Result<OptReport, PgoError> {
    let ids: Vec<RoomId> = view.node_ids().collect();
    let index: BTreeMap<RoomId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let raw = collect_factors(view, config.factor_mode);
    if raw.is_empty() {
        if ids.len() > 1 {
            return Err(PgoError::Unconstrained { rooms: ids.len() });
        }
        return Ok(OptReport {
            converged: true,
            ..Default::default()
        });
    }
    if let Some(a) = config.anchor {
        if !index.contains_key(&a) {
            return Err(PgoError::MissingAnchor(a));
        }
    }
    let factors: Vec<(usize, usize, Factor)> = raw.iter().map(|f| (index[&f.i], index[&f.j], *f)).collect();

    let mut parent: Vec<usize> = (0..ids.len()).collect();
    for (a, b, _) in &factors {
        let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut anchor_of: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..ids.len() {
        let root = find(&mut parent, i);
        anchor_of.entry(root).or_insert(i);
    }
    if let Some(a) = config.anchor {
        let i = index[&a];
        let root = find(&mut parent, i);
        anchor_of.insert(root, i);
    }
    let involved: Vec<bool> = {
        let mut v = alloc::vec![false; ids.len()];
        for (a, b, _) in &factors {
            v[*a] = true;
            v[*b] = true;
        }
        v
    };
    let mut slot = alloc::vec![None; ids.len()];
    let mut n_vars = 0;
    let mut anchors = Vec::new();
    for i in 0..ids.len() {
        let root = find(&mut parent, i);
        if !involved[i] {
            continue;
        }
        if anchor_of[&root] == i {
            anchors.push(ids[i]);
        } else {
            slot[i] = Some(n_vars);
            n_vars += 1;
        }
    }

    let problem = Problem {
        factors: &factors,
        slot,
        huber: config.huber,
    };
    let mut poses: Vec<Sim3> = ids.iter().map(|id| view.pose(*id).expect("listed node")).collect();
    let mut cost = problem.cost(&poses)?;
    let mut report = OptReport {
        initial_cost: cost,
        final_cost: cost,
        accepted_costs: alloc::vec![cost],
        factors: factors.len(),
        anchors,
        ..Default::default()
    };
    if n_vars == 0 {
        report.converged = true;
        return Ok(report);
    }

    let mut sys = solve::BlockSystem::new(n_vars);
    let mut lambda = config.lambda_init;
    let mut relinearize = true;
    while report.iterations < config.max_iters {
        if cost <= f64::MIN_POSITIVE {
            report.converged = true;
            break;
        }
        if relinearize {
            problem.linearize(&poses, &mut sys)?;
            relinearize = false;
        }
        report.iterations += 1;
        report.lambdas.push(lambda);
        let step: DVector<f64> = if n_vars <= config.dense_limit {
            sys.solve_dense(lambda)
        } else {
            sys.solve_pcg(lambda)
        }
        .ok_or(PgoError::Singular)?;

        let mut trial = poses.clone();
        for (i, s) in problem.slot.iter().enumerate() {
            if let Some(s) = s {
                let d = Vector7::from_column_slice(&step.as_slice()[7 * s..7 * s + 7]);
                trial[i] = poses[i] * Sim3::exp(&Tangent7::from_vector(&d));
            }
        }
        let new_cost = match problem.cost(&trial) {
            Ok(c) if c.is_finite() => c,
            _ => f64::INFINITY,
        };
        if new_cost < cost {
            let decrease = (cost - new_cost) / cost;
            poses = trial;
            cost = new_cost;
            report.accepted_costs.push(cost);
            lambda = (lambda / 10.0).max(1e-12);
            relinearize = true;
            if decrease < config.cost_tol || step.norm() < config.step_tol {
                report.converged = true;
                break;
            }
        } else {
            if step.norm() < config.step_tol {
                report.converged = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    report.final_cost = cost;
    for (id, pose) in ids.iter().zip(poses) {
        view.set_pose(*id, pose)?;
    }
    Ok(report)
}
