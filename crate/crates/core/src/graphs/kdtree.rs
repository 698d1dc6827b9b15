//! Exact k-nearest-neighbor index over feature rows.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::features::{squared_distance, FeatureMatrix, NUM_FEATURES};

const LEAF_SIZE: usize = 12;

#[derive(Debug)]
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

/// Balanced k-d tree. Points are stored in leaf order for locality.
#[derive(Debug)]
pub struct KdTree {
    points: Vec<f64>,
    ids: Vec<u32>,
    position: Vec<u32>,
    nodes: Vec<Node>,
}

/// A neighbor candidate, ordered by `(squared distance, id)`.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    d2: f64,
    id: u32,
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
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

/// Reusable query buffer.
#[derive(Default)]
pub struct QueryScratch {
    heap: BinaryHeap<Candidate>,
}

impl KdTree {
    pub fn build(feats: &FeatureMatrix) -> Result<Self> {
        let n = feats.len();
        if n < 2 {
            return Err(Error::InsufficientData(n));
        }
        let flat = feats.as_flat();
        let mut ids: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::new();
        build_node(flat, &mut ids, 0, n, &mut nodes);

        let mut points = Vec::with_capacity(flat.len());
        let mut position = vec![0u32; n];
        for (pos, &id) in ids.iter().enumerate() {
            points.extend_from_slice(feats.row(id as usize));
            position[id as usize] = pos as u32;
        }
        Ok(Self {
            points,
            ids,
            position,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn point(&self, pos: usize) -> &[f64] {
        &self.points[pos * NUM_FEATURES..(pos + 1) * NUM_FEATURES]
    }

    /// The `min(k, n - 1)` nearest neighbors of indexed row `i`, excluding
    /// `i` itself, as `(id, distance)` in nondecreasing distance order.
    /// Equidistant neighbors are ranked by lower id.
    pub fn query(&self, i: usize, k: usize) -> Vec<(usize, f64)> {
        self.query_with(i, k, &mut QueryScratch::default())
    }

    pub fn query_with(&self, i: usize, k: usize, scratch: &mut QueryScratch) -> Vec<(usize, f64)> {
        let q = self.point(self.position[i] as usize);
        self.nearest(q, k.min(self.len() - 1), Some(i), scratch)
    }

    /// Exact k-NN of an arbitrary point.
    pub fn nearest(
        &self,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        scratch: &mut QueryScratch,
    ) -> Vec<(usize, f64)> {
        let heap = &mut scratch.heap;
        heap.clear();
        if k > 0 {
            let exclude = exclude.map_or(u32::MAX, |e| e as u32);
            self.search(0, q, k, exclude, heap);
        }
        let mut found: Vec<Candidate> = heap.drain().collect();
        found.sort_unstable();
        found
            .into_iter()
            .map(|c| (c.id as usize, c.d2.sqrt()))
            .collect()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, exclude: u32, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for pos in start..end {
                    let id = self.ids[pos];
                    if id == exclude {
                        continue;
                    }
                    let cand = Candidate {
                        d2: squared_distance(q, self.point(pos)),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // `<=` keeps equidistant lower-id points reachable.
                if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.d2) {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

fn build_node(flat: &[f64], ids: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let at = nodes.len();
    let coord = |id: u32, axis: usize| flat[id as usize * NUM_FEATURES + axis];
    let slice = &mut ids[start..end];

    let mut best = (0, 0.0);
    if slice.len() > LEAF_SIZE {
        for axis in 0..NUM_FEATURES {
            let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &id| {
                let v = coord(id, axis);
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
    }
    if slice.len() <= LEAF_SIZE || best.1 == 0.0 {
        nodes.push(Node::Leaf { start, end });
        return at;
    }

    let axis = best.0;
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        coord(a, axis).total_cmp(&coord(b, axis)).then(a.cmp(&b))
    });
    let value = coord(slice[mid], axis);

    nodes.push(Node::Leaf { start, end });
    let left = build_node(flat, ids, start, start + mid, nodes);
    let right = build_node(flat, ids, start + mid, end, nodes);
    nodes[at] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    at
}
