//! Dense row-major point sets and an exact k-d tree over them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Points> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidData(format!(
                "{} values cannot be split into rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows(rows: &[FeatureRow]) -> Points {
        let dim = crate::features::FEATURE_DIM;
        Points {
            dim,
            data: rows.iter().flat_map(|r| r.values).collect(),
        }
    }

    pub fn from_vecs(rows: &[Vec<f64>]) -> Result<Points> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput("point set"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Points::new(data, dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn select(&self, indices: &[usize]) -> Points {
        Points {
            dim: self.dim,
            data: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim,
            });
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

const LEAF_SIZE: usize = 16;
/// Relative slack on pruning bounds so rounding never discards a point
/// that the exact distance test would accept.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug)]
struct Node {
    start: usize,
    end: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    children: Option<(usize, usize)>,
}

/// Exact k-d tree. Query results are identical to a linear scan using
/// [`euclidean`].
#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a Points,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub dist: f64,
    pub index: usize,
}

impl Eq for Neighbour {}

impl Ord for Neighbour {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbour {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a Points) -> KdTree<'a> {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let dim = self.points.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            for (j, &v) in self.points.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let (split_dim, spread) = (0..dim)
            .map(|j| (j, hi[j] - lo[j]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("dim > 0");
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            lo,
            hi,
            children: None,
        });
        if end - start > LEAF_SIZE && spread > 0.0 {
            let mid = start + (end - start) / 2;
            let pts = self.points;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                pts.row(a)[split_dim].total_cmp(&pts.row(b)[split_dim])
            });
            let left = self.build(start, mid);
            let right = self.build(mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    fn box_distance(&self, node: &Node, q: &[f64]) -> f64 {
        q.iter()
            .enumerate()
            .map(|(j, &v)| {
                let d = if v < node.lo[j] {
                    node.lo[j] - v
                } else if v > node.hi[j] {
                    v - node.hi[j]
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    fn pruned(&self, node: &Node, q: &[f64], bound: f64) -> bool {
        self.box_distance(node, q) > bound * (1.0 + PRUNE_SLACK) + f64::MIN_POSITIVE
    }

    /// The `k` nearest points to `q` (excluding index `exclude`), sorted by
    /// distance then index.
    pub fn knn(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbour> {
        let mut heap: BinaryHeap<Neighbour> = BinaryHeap::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if heap.len() == k && self.pruned(node, q, heap.peek().expect("non-empty").dist) {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let dl = self.box_distance(&self.nodes[l], q);
                    let dr = self.box_distance(&self.nodes[r], q);
                    // nearer child last so it is explored first
                    if dl <= dr {
                        stack.extend([r, l]);
                    } else {
                        stack.extend([l, r]);
                    }
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        if Some(i) == exclude {
                            continue;
                        }
                        let cand = Neighbour {
                            dist: euclidean(q, self.points.row(i)),
                            index: i,
                        };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if cand < *heap.peek().expect("non-empty") {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
        }
        heap.into_sorted_vec()
    }

    fn visit_within<F>(&self, q: &[f64], radius: f64, mut f: F)
    where
        F: FnMut(Neighbour) -> bool,
    {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if self.pruned(node, q, radius) {
                continue;
            }
            match node.children {
                Some((l, r)) => stack.extend([r, l]),
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let dist = euclidean(q, self.points.row(i));
                        if dist <= radius && !f(Neighbour { dist, index: i }) {
                            return;
                        }
                    }
                }
            }
        }
    }

    /// All points with distance `<= radius`, sorted by index.
    pub fn within(&self, q: &[f64], radius: f64, exclude: Option<usize>) -> Vec<Neighbour> {
        let mut out = Vec::new();
        self.visit_within(q, radius, |n| {
            if Some(n.index) != exclude {
                out.push(n);
            }
            true
        });
        out.sort_unstable_by_key(|n| n.index);
        out
    }

    /// Number of points within `radius`, stopping once `limit` is reached.
    pub fn count_within(&self, q: &[f64], radius: f64, limit: usize) -> usize {
        let mut count = 0;
        self.visit_within(q, radius, |_| {
            count += 1;
            count < limit
        });
        count
    }

    pub fn nearest(&self, q: &[f64]) -> Option<Neighbour> {
        self.knn(q, 1, None).into_iter().next()
    }
}
