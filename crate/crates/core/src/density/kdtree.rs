//! Static kd-tree over a flat, row-major point buffer.
//!
//! Neighbors are ordered by `(squared distance, insertion index)`, so results
//! are identical to a brute-force sort with ties broken by insertion order.

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
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
    },
}

#[derive(Clone, Debug, Default)]
pub(crate) struct KdTree {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A bounded, sorted candidate list for k-NN search.
#[derive(Debug)]
pub(crate) struct Candidates {
    k: usize,
    pub(crate) items: Vec<(f64, usize)>,
}

impl Candidates {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn full(&self) -> bool {
        self.items.len() >= self.k
    }

    pub(crate) fn worst(&self) -> f64 {
        if self.full() {
            self.items[self.k - 1].0
        } else {
            f64::INFINITY
        }
    }

    pub(crate) fn offer(&mut self, d2: f64, idx: usize) {
        let key = (d2, idx);
        if self.full() && key >= *self.items.last().unwrap() {
            return;
        }
        let pos = self.items.partition_point(|c| *c < key);
        self.items.insert(pos, key);
        self.items.truncate(self.k);
    }
}

impl KdTree {
    /// Builds over the first `count` points of `points` (row-major, `dim` columns).
    pub(crate) fn build(points: &[f64], dim: usize, count: usize) -> Self {
        let mut tree = Self {
            nodes: Vec::new(),
            order: (0..count).collect(),
        };
        if count > 0 {
            tree.build_node(points, dim, 0, count);
        }
        tree
    }

    pub(crate) fn len(&self) -> usize {
        self.order.len()
    }

    fn build_node(&mut self, points: &[f64], dim: usize, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let coord = |i: usize, a: usize| points[i * dim + a];
        let slice = &mut self.order[start..end];
        let axis = (0..dim)
            .map(|a| {
                let (lo, hi) = slice
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        (lo.min(coord(i, a)), hi.max(coord(i, a)))
                    });
                (a, hi - lo)
            })
            .fold(
                (0, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            )
            .0;
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| coord(a, axis).total_cmp(&coord(b, axis)));
        let value = coord(slice[mid], axis);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(points, dim, start, start + mid);
        let right = self.build_node(points, dim, start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub(crate) fn knn(&self, points: &[f64], dim: usize, query: &[f64], cands: &mut Candidates) {
        if !self.nodes.is_empty() {
            self.knn_node(0, points, dim, query, cands);
        }
    }

    fn knn_node(
        &self,
        id: usize,
        points: &[f64],
        dim: usize,
        query: &[f64],
        cands: &mut Candidates,
    ) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    cands.offer(sq_dist(&points[i * dim..(i + 1) * dim], query), i);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_node(near, points, dim, query, cands);
                if diff * diff <= cands.worst() {
                    self.knn_node(far, points, dim, query, cands);
                }
            }
        }
    }

    /// Calls `visit(squared distance, index)` for every indexed point within `radius2`.
    pub(crate) fn within<F: FnMut(f64, usize)>(
        &self,
        points: &[f64],
        dim: usize,
        query: &[f64],
        radius2: f64,
        visit: &mut F,
    ) {
        if !self.nodes.is_empty() {
            self.within_node(0, points, dim, query, radius2, visit);
        }
    }

    fn within_node<F: FnMut(f64, usize)>(
        &self,
        id: usize,
        points: &[f64],
        dim: usize,
        query: &[f64],
        radius2: f64,
        visit: &mut F,
    ) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = sq_dist(&points[i * dim..(i + 1) * dim], query);
                    if d2 <= radius2 {
                        visit(d2, i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.within_node(near, points, dim, query, radius2, visit);
                if diff * diff <= radius2 {
                    self.within_node(far, points, dim, query, radius2, visit);
                }
            }
        }
    }
}
