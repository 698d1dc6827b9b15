//! The two digraphs of the method and their Gaussian edge weights.
//!
//! Both builders only give out-edges to unlabeled nodes: a labeled node never
//! receives contributions, so its adjacency list stays empty.

mod kdtree;

pub use kdtree::{KdTree, QueryScratch};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::features::{squared_distance, FeatureMatrix};

/// Smallest weight an edge can carry. Keeps weights strictly positive when
/// the Gaussian underflows for very distant feature rows.
pub const MIN_WEIGHT: f64 = 1e-300;

/// Directed graph in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDigraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl SparseDigraph {
    /// Builds a graph from per-node `(target, weight)` lists.
    ///
    /// Rejects self-loops, targets out of range and weights outside `(0, 1]`.
    pub fn from_adjacency(adj: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = adj.len();
        for (i, list) in adj.iter().enumerate() {
            for &(j, w) in list {
                if j >= n || j == i {
                    return Err(Error::param(format!("invalid edge {i} -> {j}")));
                }
                if !(w > 0.0 && w <= 1.0) {
                    return Err(Error::param(format!("weight {w} of edge {i} -> {j} not in (0, 1]")));
                }
            }
        }
        Ok(Self::from_lists(adj.into_iter().map(|l| l.into_iter().map(|(j, w)| (j as u32, w)))))
    }

    fn from_lists<I, L>(lists: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = (u32, f64)>,
    {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for list in lists {
            for (j, w) in list {
                targets.push(j);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Self {
            offsets,
            targets,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Targets and weights of node `i`'s out-edges, in insertion order.
    pub fn out_edges(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.targets[r.clone()], &self.weights[r])
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.node_count()).flat_map(move |i| {
            let (t, w) = self.out_edges(i);
            t.iter().zip(w).map(move |(&j, &w)| (i, j as usize, w))
        })
    }
}

/// `exp(-d^2 / (2 sigma^2))`, floored at [`MIN_WEIGHT`].
pub fn gaussian_weight(d: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if d.is_nan() || d < 0.0 {
        return Err(Error::param(format!("distance must be >= 0, got {d}")));
    }
    Ok(weight_from_d2(d * d, 2.0 * sigma * sigma))
}

#[inline]
fn weight_from_d2(d2: f64, two_sigma2: f64) -> f64 {
    (-d2 / two_sigma2).exp().max(MIN_WEIGHT)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("sigma must be > 0, got {sigma}")))
    }
}

/// Stage-one graph with a record of whether `k` had to be reduced.
#[derive(Clone, Debug)]
pub struct KnnDigraph {
    pub graph: SparseDigraph,
    pub effective_k: usize,
    pub k_clamped: bool,
}

/// Connects every unlabeled node (`labels[i] == 0`) to its `k` nearest
/// neighbors in feature space.
///
/// `k >= n` is reduced to `n - 1` and reported through
/// [`KnnDigraph::k_clamped`].
pub fn build_knn_digraph(
    feats: &FeatureMatrix,
    labels: &[u16],
    k: usize,
    sigma: f64,
    exec: Execution,
) -> Result<KnnDigraph> {
    let n = feats.len();
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} feature rows", labels.len())));
    }
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    check_sigma(sigma)?;
    if n < 2 {
        return Err(Error::InsufficientData(n));
    }
    let effective_k = k.min(n - 1);
    let k_clamped = effective_k < k;
    if k_clamped {
        log::warn!("k = {k} reduced to {effective_k} for a {n}-node graph");
    }

    let two_sigma2 = 2.0 * sigma * sigma;
    let adj: Vec<Vec<(u32, f64)>> = if labels.iter().all(|&l| l != 0) {
        vec![Vec::new(); n]
    } else {
        let tree = KdTree::build(feats)?;
        exec::map_indices_with(exec, n, QueryScratch::default, |scratch, i| {
            if labels[i] != 0 {
                return Vec::new();
            }
            tree.query_with(i, effective_k, scratch)
                .into_iter()
                .map(|(j, d)| (j as u32, weight_from_d2(d * d, two_sigma2)))
                .collect()
        })
    };
    Ok(KnnDigraph {
        graph: SparseDigraph::from_lists(adj),
        effective_k,
        k_clamped,
    })
}

/// Neighbor offsets in adjacency order.
const EIGHT_NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Connects every flagged pixel to its 8-connected neighbors (3 at corners,
/// 5 along borders), weighted by feature distance.
pub fn build_grid_digraph(
    feats: &FeatureMatrix,
    unlabeled: &[bool],
    width: usize,
    height: usize,
    sigma: f64,
    exec: Execution,
) -> Result<SparseDigraph> {
    let n = width * height;
    if feats.len() != n || unlabeled.len() != n {
        return Err(Error::dim(format!(
            "{width}x{height} grid with {} feature rows and {} mask entries",
            feats.len(),
            unlabeled.len()
        )));
    }
    check_sigma(sigma)?;
    let two_sigma2 = 2.0 * sigma * sigma;
    let lists = exec::map_indices(exec, n, |i| {
        let mut out = ([(0u32, 0.0f64); 8], 0usize);
        if !unlabeled[i] {
            return out;
        }
        let (x, y) = ((i % width) as isize, (i / width) as isize);
        for (dy, dx) in EIGHT_NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            let w = weight_from_d2(squared_distance(feats.row(i), feats.row(j)), two_sigma2);
            out.0[out.1] = (j as u32, w);
            out.1 += 1;
        }
        out
    });
    Ok(SparseDigraph::from_lists(
        lists.into_iter().map(|(edges, len)| edges.into_iter().take(len)),
    ))
}
