//! Static 3D kd-tree for nearest-neighbour queries.

const LEAF: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Permutation of point indices; leaves own contiguous ranges.
    order: Vec<usize>,
    root: Node,
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = build(points, &mut order, 0);
        KdTree { points: points.to_vec(), order, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the closest point; ties to the lower index.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(&self.root, q, &mut best);
        Some(best)
    }

    fn search(&self, node: &Node, q: &[f64; 3], best: &mut (usize, f64)) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d = d2(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[[f64; 3]], idx: &mut [usize], offset: usize) -> Node {
    let n = idx.len();
    if n <= LEAF {
        return Node::Leaf { start: offset, end: offset + n };
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).expect("3 axes");
    if hi[axis] - lo[axis] == 0.0 {
        // all points coincide
        return Node::Leaf { start: offset, end: offset + n };
    }
    let mid = n / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[idx[mid]][axis];
    let (l, r) = idx.split_at_mut(mid);
    Node::Split {
        axis,
        value,
        left: Box::new(build(points, l, offset)),
        right: Box::new(build(points, r, offset + mid)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[[f64; 3]], q: &[f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = d2(p, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> = (0..400).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = [rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
            let (_, d) = tree.nearest(&q).unwrap();
            assert_eq!(d, brute(&pts, &q).1);
        }
    }

    #[test]
    fn planar_grid_and_duplicates() {
        let mut pts: Vec<[f64; 3]> = (0..40 * 50).map(|i| [(i % 40) as f64, (i / 40) as f64, 1.0]).collect();
        pts.extend(std::iter::repeat([3.0, 3.0, 1.0]).take(30));
        let tree = KdTree::new(&pts);
        let (i, d) = tree.nearest(&[3.1, 2.9, 1.0]).unwrap();
        assert_eq!(pts[i], [3.0, 3.0, 1.0]);
        assert!((d - 0.02).abs() < 1e-12);
        assert!(KdTree::new(&[]).nearest(&[0.0; 3]).is_none());
    }
}
