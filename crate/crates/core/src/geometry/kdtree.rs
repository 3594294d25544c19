//! Nearest-neighbour search over a fixed 3-D point set.

use nalgebra::Vector3;

const BRUTE_FORCE_LIMIT: usize = 256;
const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

/// Exact nearest-neighbour index: a k-d tree above 256 points, a linear scan
/// below.
pub struct NearestNeighbors<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    root: Option<Node>,
}

impl<'a> NearestNeighbors<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = if points.len() > BRUTE_FORCE_LIMIT {
            let n = order.len();
            Some(build(points, &mut order, 0, n))
        } else {
            None
        };
        Self { points, order, root }
    }

    /// Index and squared distance of the nearest point. Ties resolve to the
    /// lowest index.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        match &self.root {
            None => {
                for (i, p) in self.points.iter().enumerate() {
                    consider(&mut best, i, (p - q).norm_squared());
                }
            }
            Some(root) => self.search(root, q, &mut best),
        }
        best
    }

    fn search(&self, node: &Node, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    consider(best, i, (self.points[i] - q).norm_squared());
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = q[*axis] - value;
                let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if d * d <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn consider(best: &mut (usize, f64), i: usize, d2: f64) {
    if d2 < best.1 || (d2 == best.1 && i < best.0) {
        *best = (i, d2);
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    Node::Split {
        axis,
        value,
        left: Box::new(build(points, order, start, start + mid)),
        right: Box::new(build(points, order, start + mid, end)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tree_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vector3<f64>> = (0..1000)
            .map(|_| Vector3::new(rng.random(), rng.random::<f64>() * 0.3, rng.random::<f64>() * 2.0))
            .collect();
        let nn = NearestNeighbors::new(&pts);
        assert!(nn.root.is_some());
        for _ in 0..300 {
            let q = Vector3::new(rng.random_range(-0.2..1.2), rng.random_range(-0.2..0.5), rng.random_range(-0.2..2.2));
            let (i, d) = nn.nearest(&q);
            let (j, e) = pts
                .iter()
                .enumerate()
                .map(|(k, p)| (k, (p - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(d, e);
            assert_eq!(pts[i], pts[j]);
        }
    }
}
