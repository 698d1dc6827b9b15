//! Clustering coefficient, global efficiency and efficiency-based
//! small-world-ness of a graph, measured on its undirected, unweighted
//! skeleton.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{map_indices, map_indices_with, Execution};
use crate::graphs::SparseDigraph;

/// Simple undirected graph with sorted neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: Vec<Vec<u32>>,
}

impl UndirectedGraph {
    /// Builds from an edge list; duplicates and self loops are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::param(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            if a != b {
                adj[a].push(b as u32);
                adj[b].push(a as u32);
            }
        }
        Ok(Self::finish(adj))
    }

    fn finish(mut adj: Vec<Vec<u32>>) -> Self {
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Self { adj }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[i]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&(b as u32)).is_ok()
    }

    /// Stores every edge in both directions with weight 1.
    pub fn to_digraph(&self) -> SparseDigraph {
        let adj = self
            .adj
            .iter()
            .map(|l| l.iter().map(|&j| (j as usize, 1.0)).collect())
            .collect();
        SparseDigraph::from_adjacency(adj).expect("simple graph is a valid digraph")
    }

    fn local_clustering(&self, i: usize) -> f64 {
        let nb = &self.adj[i];
        let d = nb.len();
        if d < 2 {
            return 0.0;
        }
        let mut links = 0usize;
        for &u in nb {
            links += sorted_intersection(&self.adj[u as usize], nb);
        }
        // every neighbor pair was counted from both ends
        links as f64 / (d * (d - 1)) as f64
    }

    /// Mean local clustering; nodes of degree below 2 contribute 0.
    pub fn clustering(&self, exec: Execution) -> f64 {
        let n = self.node_count();
        if n == 0 {
            return 0.0;
        }
        let local = map_indices(exec, n, |i| self.local_clustering(i));
        local.iter().sum::<f64>() / n as f64
    }

    /// `1/(n(n-1))` times the sum of inverse hop distances over ordered
    /// pairs; unreachable pairs add nothing.
    pub fn efficiency(&self, exec: Execution) -> Result<f64> {
        let n = self.node_count();
        if n < 2 {
            return Err(Error::UndefinedMetric(format!(
                "efficiency needs at least 2 nodes, got {n}"
            )));
        }
        let per_source = map_indices_with(
            exec,
            n,
            || (vec![u32::MAX; n], VecDeque::new()),
            |(dist, queue), s| self.inverse_distance_sum(s, dist, queue),
        );
        Ok(per_source.iter().sum::<f64>() / (n as f64 * (n - 1) as f64))
    }

    fn inverse_distance_sum(&self, s: usize, dist: &mut [u32], queue: &mut VecDeque<u32>) -> f64 {
        dist.fill(u32::MAX);
        dist[s] = 0;
        queue.clear();
        queue.push_back(s as u32);
        // count nodes per hop level, then sum level-wise
        let mut per_level: Vec<usize> = Vec::new();
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            for &v in &self.adj[u as usize] {
                if dist[v as usize] == u32::MAX {
                    let dv = du + 1;
                    dist[v as usize] = dv;
                    if per_level.len() < dv as usize {
                        per_level.push(0);
                    }
                    per_level[dv as usize - 1] += 1;
                    queue.push_back(v);
                }
            }
        }
        per_level
            .iter()
            .enumerate()
            .map(|(l, &c)| c as f64 / (l + 1) as f64)
            .sum()
    }
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Undirected skeleton: an edge exists iff either direction exists.
pub fn symmetrize(graph: &SparseDigraph) -> UndirectedGraph {
    let mut adj = vec![Vec::new(); graph.node_count()];
    for (i, j, _) in graph.edges() {
        adj[i].push(j as u32);
        adj[j].push(i as u32);
    }
    UndirectedGraph::finish(adj)
}

pub fn clustering_coefficient(graph: &SparseDigraph) -> f64 {
    symmetrize(graph).clustering(Execution::default())
}

pub fn efficiency(graph: &SparseDigraph) -> Result<f64> {
    symmetrize(graph).efficiency(Execution::default())
}

fn check_edge_count(n: usize, m: usize) -> Result<u64> {
    let pairs = n as u64 * n.saturating_sub(1) as u64 / 2;
    if m as u64 > pairs {
        return Err(Error::param(format!(
            "{m} edges do not fit in a simple graph on {n} nodes"
        )));
    }
    Ok(pairs)
}

fn sample_gnm(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<UndirectedGraph> {
    let pairs = check_edge_count(n, m)?;
    // Floyd's sampling of m distinct pair indices out of `pairs`.
    let mut chosen = HashSet::with_capacity(m);
    for j in pairs - m as u64..pairs {
        let t = rng.gen_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let mut idx: Vec<u64> = chosen.into_iter().collect();
    idx.sort_unstable();

    // pair index p enumerates (a, b), a < b, row by row
    let mut adj = vec![Vec::new(); n];
    let (mut a, mut row_start) = (0usize, 0u64);
    for p in idx {
        while p >= row_start + (n - 1 - a) as u64 {
            row_start += (n - 1 - a) as u64;
            a += 1;
        }
        let b = a + 1 + (p - row_start) as usize;
        adj[a].push(b as u32);
        adj[b].push(a as u32);
    }
    Ok(UndirectedGraph::finish(adj))
}

/// Uniform random simple graph with `n` nodes and exactly `m` edges.
pub fn random_undirected(n: usize, m: usize, rng_seed: u64) -> Result<UndirectedGraph> {
    sample_gnm(n, m, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

/// [`random_undirected`] stored as a symmetric digraph.
pub fn random_equivalent(n: usize, m: usize, rng_seed: u64) -> Result<SparseDigraph> {
    Ok(random_undirected(n, m, rng_seed)?.to_digraph())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkStats {
    pub nodes: usize,
    /// Undirected edges of the skeleton.
    pub edges: usize,
    pub clustering: f64,
    pub efficiency: f64,
    pub c_rand: f64,
    pub e_rand: f64,
    /// `(C / C_rand)(E / E_rand)`; `+inf` when a baseline mean is 0.
    pub swn: f64,
    pub swn_infinite: bool,
    pub baseline_samples: usize,
    pub seed: u64,
}

/// Compares `graph` against `samples` random graphs of equal size.
///
/// Sample `s` draws from stream `s` of a generator seeded with `rng_seed`,
/// so the result does not depend on scheduling.
pub fn small_world_ness(
    graph: &SparseDigraph,
    samples: usize,
    rng_seed: u64,
    exec: Execution,
) -> Result<NetworkStats> {
    if samples == 0 {
        return Err(Error::param("need at least one baseline sample"));
    }
    let g = symmetrize(graph);
    let (n, m) = (g.node_count(), g.edge_count());
    let clustering = g.clustering(exec);
    let efficiency = g.efficiency(exec)?;
    let mut c_sum = 0.0;
    let mut e_sum = 0.0;
    for s in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(s as u64);
        let r = sample_gnm(n, m, &mut rng)?;
        c_sum += r.clustering(exec);
        e_sum += r.efficiency(exec)?;
    }
    let c_rand = c_sum / samples as f64;
    let e_rand = e_sum / samples as f64;
    let swn_infinite = c_rand == 0.0 || e_rand == 0.0;
    let swn = if swn_infinite {
        f64::INFINITY
    } else {
        (clustering / c_rand) * (efficiency / e_rand)
    };
    Ok(NetworkStats {
        nodes: n,
        edges: m,
        clustering,
        efficiency,
        c_rand,
        e_rand,
        swn,
        swn_infinite,
        baseline_samples: samples,
        seed: rng_seed,
    })
}
