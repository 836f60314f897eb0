//! Block-structured normal equations with dense and iterative solvers.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::geometry::{Matrix7, Vector7};

pub(super) struct BlockSystem {
    n: usize,
    blocks: BTreeMap<(usize, usize), Matrix7>,
    gradient: DVector<f64>,
}

impl BlockSystem {
    pub(super) fn new(n: usize) -> Self {
        Self {
            n,
            blocks: BTreeMap::new(),
            gradient: DVector::zeros(7 * n),
        }
    }

    pub(super) fn clear(&mut self) {
        self.blocks.clear();
        self.gradient.fill(0.0);
    }

    pub(super) fn add_block(&mut self, a: usize, b: usize, m: &Matrix7) {
        *self.blocks.entry((a, b)).or_insert_with(Matrix7::zeros) += m;
    }

    pub(super) fn add_gradient(&mut self, a: usize, g: &Vector7) {
        let mut seg = self.gradient.fixed_rows_mut::<7>(7 * a);
        seg += g;
    }

    /// Marquardt damping: diagonal entries scaled by `1 + lambda`.
    fn damped_diag(&self, a: usize, lambda: f64) -> Matrix7 {
        let mut d = self.blocks.get(&(a, a)).copied().unwrap_or_else(Matrix7::zeros);
        for k in 0..7 {
            d[(k, k)] *= 1.0 + lambda;
            d[(k, k)] += 1e-12;
        }
        d
    }

    pub(super) fn solve_dense(&self, lambda: f64) -> Option<DVector<f64>> {
        let dim = 7 * self.n;
        let mut h = DMatrix::zeros(dim, dim);
        for (&(a, b), m) in &self.blocks {
            let block = if a == b { self.damped_diag(a, lambda) } else { *m };
            h.view_mut((7 * a, 7 * b), (7, 7)).copy_from(&block);
        }
        let chol = h.cholesky()?;
        Some(-chol.solve(&self.gradient))
    }

    /// Conjugate gradients with a block-Jacobi preconditioner.
    pub(super) fn solve_pcg(&self, lambda: f64) -> Option<DVector<f64>> {
        let dim = 7 * self.n;
        let diag: Vec<Matrix7> = (0..self.n).map(|a| self.damped_diag(a, lambda)).collect();
        let precond: Vec<Matrix7> = diag
            .iter()
            .map(|d| d.cholesky().map(|c| c.inverse()))
            .collect::<Option<_>>()?;
        let apply = |x: &DVector<f64>| {
            let mut y = DVector::zeros(dim);
            for (&(a, b), m) in &self.blocks {
                let block = if a == b { &diag[a] } else { m };
                let xb = x.fixed_rows::<7>(7 * b);
                let mut yb = y.fixed_rows_mut::<7>(7 * a);
                yb += block * xb;
            }
            y
        };
        let precondition = |r: &DVector<f64>| {
            let mut z = DVector::zeros(dim);
            for (a, p) in precond.iter().enumerate() {
                z.fixed_rows_mut::<7>(7 * a).copy_from(&(p * r.fixed_rows::<7>(7 * a)));
            }
            z
        };
        let b = -&self.gradient;
        let b_norm = b.norm();
        let mut x = DVector::zeros(dim);
        if b_norm == 0.0 {
            return Some(x);
        }
        let mut r = b.clone();
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        for _ in 0..(10 * dim).max(100) {
            let ap = apply(&p);
            let denom = p.dot(&ap);
            if denom <= 0.0 {
                return None;
            }
            let alpha = rz / denom;
            x += &p * alpha;
            r -= &ap * alpha;
            if r.norm() <= 1e-14 * b_norm {
                break;
            }
            z = precondition(&r);
            let rz_next = r.dot(&z);
            p = &z + &p * (rz_next / rz);
            rz = rz_next;
        }
        Some(x)
    }
}
