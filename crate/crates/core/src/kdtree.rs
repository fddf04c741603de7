//! Static 3D k-d tree with exact nearest-neighbour distance queries.

pub type Point = [f64; 3];

#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let d = |k: usize| a[k] - b[k];
    d(2) * d(2) + (d(1) * d(1) + d(0) * d(0))
}

/// Balanced tree stored implicitly: the node for `[lo, hi)` sits at the
/// midpoint, its left subtree occupies `[lo, mid)` and right `[mid+1, hi)`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(mut points: Vec<Point>) -> Self {
        let mut axes = vec![0u8; points.len()];
        build(&mut points, &mut axes);
        Self { points, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to the nearest stored point, or `None` if empty.
    pub fn nearest_squared(&self, query: &Point) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        self.search(0, self.points.len(), query, &mut best);
        Some(best)
    }

    fn search(&self, lo: usize, hi: usize, q: &Point, best: &mut f64) {
        if lo >= hi || *best == 0.0 {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d = squared_distance(q, p);
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
        self.search(near.0, near.1, q, best);
        if diff * diff < *best {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build(points: &mut [Point], axes: &mut [u8]) {
    if points.len() <= 1 {
        return;
    }
    let axis = widest_axis(points);
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[mid] = axis as u8;
    let (left, rest) = points.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build(left, left_axes);
    build(&mut rest[1..], &mut rest_axes[1..]);
}

fn widest_axis(points: &[Point]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_tree() {
        assert_eq!(KdTree::new(vec![]).nearest_squared(&[0.0; 3]), None);
    }

    proptest! {
        #[test]
        fn nearest_matches_linear_scan(
            pts in prop::collection::vec(prop::array::uniform3(-20i32..20), 1..80),
            queries in prop::collection::vec(prop::array::uniform3(-25i32..25), 1..20),
        ) {
            let pts: Vec<Point> = pts.iter().map(|p| p.map(f64::from)).collect();
            let tree = KdTree::new(pts.clone());
            for q in queries {
                let q = q.map(f64::from);
                let brute = pts.iter().map(|p| squared_distance(&q, p)).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(tree.nearest_squared(&q), Some(brute));
            }
        }
    }
}
