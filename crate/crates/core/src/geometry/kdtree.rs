use alloc::vec::Vec;

use nalgebra::Vector3;

const LEAF: usize = 8;

/// Static 3-d tree for nearest-neighbour queries.
///
/// Nodes are stored implicitly: a range `[lo, hi)` of the permutation has
/// its splitting point at `lo + (hi - lo) / 2`.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axes: alloc::vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF {
            return;
        }
        let (mut min, mut max) = (self.points[self.order[lo]], self.points[self.order[lo]]);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = lo + (hi - lo) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |a, b| points[*a][axis].total_cmp(&points[*b][axis]));
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Index (into the construction slice) and squared distance of the
    /// nearest point, or `None` for an empty tree.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.points.len(), &mut best);
        Some(best)
    }

    fn search(&self, q: &Vector3<f64>, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let d = (self.points[i] - q).norm_squared();
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let d = (self.points[i] - q).norm_squared();
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[i][axis];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, first.0, first.1, best);
        if diff * diff <= best.1 {
            self.search(q, second.0, second.1, best);
        }
    }
}
