//! Static 3D kd-tree for exact nearest-neighbour queries.

use crate::renderer::Vec3;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    // permutation of point indices, laid out as an implicit balanced tree
    order: Vec<usize>,
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and Euclidean distance of the nearest point; ties go to the
    /// lowest index. `None` on an empty tree.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some((best.1, best.0.sqrt()))
    }

    fn search(&self, q: Vec3, lo: usize, hi: usize, depth: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d = dist2(q, p);
        if d < best.0 || (d == best.0 && idx < best.1) {
            *best = (d, idx);
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, depth + 1, best);
        // `<=` keeps equal-distance candidates reachable for tie-breaking
        if delta * delta <= best.0 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
