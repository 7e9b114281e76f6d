//! A static kd-tree over 3D points answering exact k-nearest-neighbor queries.
//!
//! Results are ordered by squared Euclidean distance, then by ascending point
//! index, so equal-distance neighbors come back in a reproducible order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    // `usize::MAX` marks a leaf.
    dim: usize,
    split: f64,
    left: usize,
    right: usize,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            dim: usize::MAX,
            split: 0.0,
            left: 0,
            right: 0,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }

        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.perm[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let dim = extent.imax();
        if extent[dim] <= 0.0 {
            // All points coincide; keep them in one leaf.
            return id;
        }

        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim])
        });
        let split = self.points[self.perm[mid]][dim];

        let left = self.build(start, mid);
        let right = self.build(mid, end);
        let node = &mut self.nodes[id];
        node.dim = dim;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    /// The `k` nearest points to `query`, as `(index, squared distance)` pairs
    /// sorted by distance with ties broken by ascending index.
    pub fn nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.dist2))
            .collect()
    }

    fn search(&self, id: usize, query: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let node = &self.nodes[id];
        if node.dim == usize::MAX {
            for &index in &self.perm[node.start..node.end] {
                let cand = Candidate {
                    dist2: (self.points[index] - query).norm_squared(),
                    index,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }

        let delta = query[node.dim] - node.split;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, query, k, heap);
        // Equal distances must still be visited so index tie-breaking is exact.
        if heap.len() < k || delta * delta <= heap.peek().unwrap().dist2 {
            self.search(far, query, k, heap);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_on_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::new(&points);
        for _ in 0..50 {
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            for k in [1, 7, 40] {
                assert_eq!(tree.nearest(&q, k), brute_force(&points, &q, k));
            }
        }
    }

    #[test]
    fn ties_resolved_by_index_on_grid() {
        // Integer grid: many exactly equal distances.
        let mut points = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    points.push(Vector3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let tree = KdTree::new(&points);
        for (qi, k) in [(0, 5), (40, 9), (77, 20)] {
            let q = points[qi];
            assert_eq!(tree.nearest(&q, k), brute_force(&points, &q, k));
        }
    }

    #[test]
    fn duplicated_points_all_returned() {
        let points = vec![Vector3::new(1.0, 1.0, 1.0); 30];
        let tree = KdTree::new(&points);
        let got = tree.nearest(&Vector3::new(1.0, 1.0, 1.0), 30);
        assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), (0..30).collect::<Vec<_>>());
    }
}
