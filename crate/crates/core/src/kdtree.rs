//! Static 3D kd-tree for exact k-nearest-neighbor queries.
//!
//! Results are ordered by `(squared distance, index)`, so equidistant
//! candidates resolve to the lower index. The search only prunes a subtree
//! when its slab is strictly farther than the current k-th candidate, which
//! keeps that tie-break exact.

use crate::types::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Bounded candidate list sorted ascending by `(d2, index)`.
struct Candidates {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Candidates {
    fn new(k: usize) -> Self {
        Candidates {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    fn offer(&mut self, d2: f64, idx: usize) {
        if self.items.len() == self.k {
            let last = self.items[self.k - 1];
            if (d2, idx) >= last {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| (d, i) < (d2, idx));
        self.items.insert(pos, (d2, idx));
        self.items.truncate(self.k);
    }
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let dim = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][dim].total_cmp(&pts[b][dim]).then(a.cmp(&b))
        });
        let value = pts[self.order[mid]][dim];
        // placeholder, patched once children exist
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, skipping index `exclude`.
    pub fn nearest(&self, query: &Point3, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut cand = Candidates::new(k);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, exclude, &mut cand);
        }
        cand.items.into_iter().map(|(_, i)| i).collect()
    }

    fn search(&self, node: usize, q: &Point3, exclude: Option<usize>, cand: &mut Candidates) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) != exclude {
                        cand.offer((self.points[i] - q).norm_squared(), i);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, exclude, cand);
                if diff * diff <= cand.worst() {
                    self.search(far, q, exclude, cand);
                }
            }
        }
    }
}

/// Exhaustive reference search with the same ordering rule.
pub fn brute_force_nearest(points: &[Point3], i: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| ((p - points[i]).norm_squared(), j))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}
