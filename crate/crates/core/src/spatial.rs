//! A static 3D kd-tree for exact k-nearest-neighbor and nearest-distance
//! queries. Neighbors are ordered by (squared distance, index) so results are
//! identical to a brute-force scan, ties included.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Leaf-free implicit kd-tree over a point slice: node `mid` of every index
/// range is the splitting point.
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build(&points, &mut order, &mut axes, 0);
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: u32) -> &[f64; 3] {
        &self.points[i as usize]
    }

    /// The `k` nearest points to `query` as (index, squared distance),
    /// nearest first. `exclude` is skipped (typically the query's own index).
    pub fn knn(&self, query: &[f64; 3], k: usize, exclude: Option<u32>) -> Vec<(u32, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, self.order.len(), query, k, exclude, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.idx, c.d2)).collect()
    }

    fn knn_rec(
        &self,
        lo: usize,
        hi: usize,
        q: &[f64; 3],
        k: usize,
        exclude: Option<u32>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        if Some(idx) != exclude {
            let c = Candidate { d2: dist2(p, q), idx };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().unwrap() {
                heap.pop();
                heap.push(c);
            }
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(near.0, near.1, q, k, exclude, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
            self.knn_rec(far.0, far.1, q, k, exclude, heap);
        }
    }

    /// Squared distance from `query` to the nearest stored point.
    pub fn nearest_d2(&self, query: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.nearest_rec(0, self.order.len(), query, &mut best);
        best
    }

    fn nearest_rec(&self, lo: usize, hi: usize, q: &[f64; 3], best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = &self.points[self.order[mid] as usize];
        let d = dist2(p, q);
        if d < *best {
            *best = d;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(near.0, near.1, q, best);
        if diff * diff < *best {
            self.nearest_rec(far.0, far.1, q, best);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [u32], axes: &mut [u8], _depth: usize) {
    if order.len() <= 1 {
        return;
    }
    // split along the axis of largest spread
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (laxes, raxes) = axes.split_at_mut(mid);
    build(points, left, laxes, _depth + 1);
    build(points, &mut right[1..], &mut raxes[1..], _depth + 1);
}
