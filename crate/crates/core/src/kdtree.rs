//! Static KD-tree over 3D points.
//!
//! Median split on the widest axis, leaf size 16, rebuilt from scratch after
//! each ingestion. Queries are exact and deterministic: ties at equal
//! distance resolve to the lower insertion index.

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
        /// Bounding box of the subtree, for pruning.
        min: [f64; 3],
        max: [f64; 3],
    },
}

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Original insertion index of each entry in `order`.
    ids: Vec<u32>,
    /// Permutation of point indices, partitioned by the tree.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

/// A k-NN result: squared distance and insertion index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist_sq: f64,
    pub index: usize,
}

impl KdTree {
    pub fn build(points: Vec<[f64; 3]>) -> Self {
        let n = points.len();
        let ids: Vec<u32> = (0..n as u32).collect();
        let mut tree = KdTree { points, ids, order: (0..n as u32).collect(), nodes: Vec::new(), root: 0 };
        if n > 0 {
            tree.root = tree.build_node(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bounds(&self, start: usize, end: usize) -> ([f64; 3], [f64; 3]) {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        (min, max)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let (min, max) = self.bounds(start, end);
        let mut axis = 0;
        for a in 1..3 {
            if max[a] - min[a] > max[axis] - min[axis] {
                axis = a;
            }
        }
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] as usize][axis];
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes.push(Node::Split { axis, value, left, right, min, max });
        self.nodes.len() - 1
    }

    /// Up to `k` nearest points within `radius`, nearest first.
    pub fn knn_radius(&self, query: [f64; 3], k: usize, radius: f64) -> Vec<Neighbor> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        let mut bound = radius * radius;
        self.knn_rec(self.root, query, k, &mut bound, &mut best);
        best
    }

    fn knn_rec(&self, node: usize, q: [f64; 3], k: usize, bound: &mut f64, best: &mut Vec<Neighbor>) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let p = self.points[i as usize];
                    let d = dist_sq(p, q);
                    if d <= *bound {
                        let cand = Neighbor { dist_sq: d, index: self.ids[i as usize] as usize };
                        // Keep `best` sorted by (dist, insertion index).
                        let pos = best
                            .binary_search_by(|n| cmp_neighbor(n, &cand))
                            .unwrap_or_else(|e| e);
                        best.insert(pos, cand);
                        if best.len() > k {
                            best.pop();
                        }
                        if best.len() == k {
                            *bound = best[k - 1].dist_sq;
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right, min, max } => {
                if box_dist_sq(*min, *max, q) > *bound {
                    return;
                }
                let (near, far) = if q[*axis] <= *value { (*left, *right) } else { (*right, *left) };
                self.knn_rec(near, q, k, bound, best);
                self.knn_rec(far, q, k, bound, best);
            }
        }
    }

    /// True iff any point lies within `radius` (closed ball).
    pub fn has_within(&self, query: [f64; 3], radius: f64) -> bool {
        if self.points.is_empty() {
            return false;
        }
        self.any_rec(self.root, query, radius * radius)
    }

    fn any_rec(&self, node: usize, q: [f64; 3], r_sq: f64) -> bool {
        match &self.nodes[node] {
            Node::Leaf { start, end } => self.order[*start..*end]
                .iter()
                .any(|&i| dist_sq(self.points[i as usize], q) <= r_sq),
            Node::Split { left, right, min, max, .. } => {
                if box_dist_sq(*min, *max, q) > r_sq {
                    return false;
                }
                self.any_rec(*left, q, r_sq) || self.any_rec(*right, q, r_sq)
            }
        }
    }

    /// Distance to the nearest point, if any. Used by the ray-marching
    /// occupancy bound.
    pub fn nearest_dist(&self, query: [f64; 3]) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut bound = f64::INFINITY;
        self.nearest_rec(self.root, query, &mut bound);
        Some(bound.sqrt())
    }

    fn nearest_rec(&self, node: usize, q: [f64; 3], bound: &mut f64) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d = dist_sq(self.points[i as usize], q);
                    if d < *bound {
                        *bound = d;
                    }
                }
            }
            Node::Split { axis, value, left, right, min, max } => {
                if box_dist_sq(*min, *max, q) >= *bound {
                    return;
                }
                let (near, far) = if q[*axis] <= *value { (*left, *right) } else { (*right, *left) };
                self.nearest_rec(near, q, bound);
                self.nearest_rec(far, q, bound);
            }
        }
    }
}

fn cmp_neighbor(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    a.dist_sq
        .partial_cmp(&b.dist_sq)
        .unwrap()
        .then(a.index.cmp(&b.index))
}

fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn box_dist_sq(min: [f64; 3], max: [f64; 3], q: [f64; 3]) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if q[a] < min[a] {
            min[a] - q[a]
        } else if q[a] > max[a] {
            q[a] - max[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

/// Exhaustive reference query with identical tie-breaking. The production
/// tree is validated against this in tests and in the acceptance suite.
pub fn linear_knn_radius(points: &[[f64; 3]], query: [f64; 3], k: usize, radius: f64) -> Vec<Neighbor> {
    let r_sq = radius * radius;
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let d = dist_sq(p, query);
            (d <= r_sq).then_some(Neighbor { dist_sq: d, index: i })
        })
        .collect();
    all.sort_by(cmp_neighbor);
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn hand_geometry() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let tree = KdTree::build(pts);
        let r = tree.knn_radius([0.4, 0.0, 0.0], 2, 1.0);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].index, 0);
        assert_eq!(r[1].index, 1);
        let r = tree.knn_radius([0.4, 0.0, 0.0], 2, 0.5);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].index, 0);
    }

    #[test]
    fn closed_ball_predicate() {
        let tree = KdTree::build(vec![[0.0, 0.0, 0.0]]);
        assert!(tree.has_within([0.0, 0.0, 0.999], 1.0));
        assert!(!tree.has_within([0.0, 0.0, 1.001], 1.0));
        let empty = KdTree::build(vec![]);
        assert!(!empty.has_within([0.0; 3], 10.0));
    }

    #[test]
    fn matches_linear_scan_on_random_clouds() {
        let mut rng = crate::rng::stream(3, 17);
        let points: Vec<[f64; 3]> =
            (0..2000).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
        let tree = KdTree::build(points.clone());
        for _ in 0..300 {
            let q = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let got = tree.knn_radius(q, 4, 1.0);
            let want = linear_knn_radius(&points, q, 4, 1.0);
            assert_eq!(got, want);
            assert_eq!(tree.has_within(q, 1.0), !want.is_empty());
            if let Some(nd) = tree.nearest_dist(q) {
                let brute = points.iter().map(|&p| dist_sq(p, q)).fold(f64::INFINITY, f64::min).sqrt();
                assert!((nd - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_positions_tie_break_by_insertion() {
        let pts = vec![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        let tree = KdTree::build(pts);
        let r = tree.knn_radius([1.0, 1.0, 1.0], 2, 0.5);
        assert_eq!(r.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1]);
    }
}
