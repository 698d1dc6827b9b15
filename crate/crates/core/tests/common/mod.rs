//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use lapseg_core::pipeline::parse_scribbles;
use lapseg_core::resample::decode_image;
use lapseg_core::{LabelMap, RgbImage, SparseDigraph};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Bundled natural image with its scribbles (black background).
pub fn bundled(name: &str) -> (RgbImage, LabelMap) {
    let img = decode_image(&std::fs::read(data_path(&format!("{name}.png"))).unwrap()).unwrap();
    let scrib =
        decode_image(&std::fs::read(data_path(&format!("{name}-scribbles.png"))).unwrap()).unwrap();
    (img, parse_scribbles(&scrib, [0, 0, 0]).unwrap())
}

pub const BUNDLED: [&str; 2] = ["chelsea", "coffee"];

/// Left half black, right half white.
pub fn two_halves(w: usize, h: usize) -> RgbImage {
    let px = (0..w * h)
        .map(|i| if i % w < w / 2 { [0.0; 3] } else { [1.0; 3] })
        .collect();
    RgbImage::new(w, h, px).unwrap()
}

/// One seed per half of a 64x64 [`two_halves`] image, placed on pixels the
/// nearest-neighbor downscale keeps.
pub fn two_half_seeds() -> LabelMap {
    let mut seeds = LabelMap::empty(64, 64, 2);
    seeds.set(30 * 64 + 16, 1);
    seeds.set(30 * 64 + 48, 2);
    seeds
}

/// Random digraph in which every unlabeled node has a directed path to a
/// seed. Seeds have no out-edges, like the stage-one graph.
pub fn random_seeded_digraph<R: Rng>(rng: &mut R, n: usize, classes: usize) -> (SparseDigraph, Vec<u16>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let seeds = rng.gen_range(classes..=classes.max(n / 10));
    let mut labels = vec![0u16; n];
    for (p, &node) in order[..seeds].iter().enumerate() {
        labels[node] = if p < classes {
            p as u16 + 1
        } else {
            rng.gen_range(1..=classes as u16)
        };
    }
    let mut adj = vec![Vec::new(); n];
    for p in seeds..n {
        let i = order[p];
        let mut targets = vec![order[rng.gen_range(0..p)]];
        for _ in 0..rng.gen_range(0..6) {
            let j = rng.gen_range(0..n);
            if j != i && !targets.contains(&j) {
                targets.push(j);
            }
        }
        adj[i] = targets
            .into_iter()
            .map(|j| (j, rng.gen_range(0.05..=1.0)))
            .collect();
    }
    (SparseDigraph::from_adjacency(adj).unwrap(), labels)
}

/// Exact fixed point of the weighted-mean update, by Gaussian elimination
/// with partial pivoting on the unlabeled block. Row-major `n x classes`.
pub fn solve_fixed_point(graph: &SparseDigraph, labels: &[u16], classes: usize) -> Vec<f64> {
    let n = labels.len();
    let unknown: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    let mut pos = vec![usize::MAX; n];
    for (r, &i) in unknown.iter().enumerate() {
        pos[i] = r;
    }
    let m = unknown.len();
    let cols = m + classes;
    let mut a = vec![0.0; m * cols];
    for (r, &i) in unknown.iter().enumerate() {
        for (j, w) in graph.edges().filter(|e| e.0 == i).map(|e| (e.1, e.2)) {
            a[r * cols + r] += w;
            if labels[j] == 0 {
                a[r * cols + pos[j]] -= w;
            } else {
                a[r * cols + m + usize::from(labels[j]) - 1] += w;
            }
        }
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x * cols + col].abs().total_cmp(&a[y * cols + col].abs()))
            .unwrap();
        for k in 0..cols {
            a.swap(col * cols + k, piv * cols + k);
        }
        let d = a[col * cols + col];
        for k in 0..cols {
            a[col * cols + k] /= d;
        }
        for r in 0..m {
            let f = a[r * cols + col];
            if r != col && f != 0.0 {
                for k in 0..cols {
                    a[r * cols + k] -= f * a[col * cols + k];
                }
            }
        }
    }
    let mut out = vec![0.0; n * classes];
    for i in 0..n {
        if labels[i] == 0 {
            let r = pos[i];
            out[i * classes..(i + 1) * classes].copy_from_slice(&a[r * cols + m..(r + 1) * cols]);
        } else {
            out[i * classes + usize::from(labels[i]) - 1] = 1.0;
        }
    }
    out
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Symmetric adjacency matrix of a digraph's skeleton.
pub fn adjacency_matrix(graph: &SparseDigraph) -> Vec<Vec<bool>> {
    let n = graph.node_count();
    let mut m = vec![vec![false; n]; n];
    for (i, j, _) in graph.edges() {
        m[i][j] = true;
        m[j][i] = true;
    }
    m
}

/// Mean local clustering by explicit triangle enumeration.
pub fn brute_clustering(adj: &[Vec<bool>]) -> f64 {
    let n = adj.len();
    let mut total = 0.0;
    for i in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&j| adj[i][j]).collect();
        let d = nb.len();
        if d < 2 {
            continue;
        }
        let mut tri = 0;
        for a in 0..d {
            for b in a + 1..d {
                if adj[nb[a]][nb[b]] {
                    tri += 1;
                }
            }
        }
        total += tri as f64 / (d * (d - 1) / 2) as f64;
    }
    total / n as f64
}

/// Global efficiency from Floyd-Warshall hop distances.
pub fn brute_efficiency(adj: &[Vec<bool>]) -> f64 {
    let n = adj.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if adj[i][j] {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && d[i][j] < inf {
                sum += 1.0 / d[i][j] as f64;
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

/// Random digraph whose skeleton is G(n, p), each edge stored in one or
/// both directions.
pub fn random_digraph<R: Rng>(rng: &mut R, n: usize, p: f64) -> SparseDigraph {
    let mut adj = vec![Vec::new(); n];
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen::<f64>() < p {
                match rng.gen_range(0..3) {
                    0 => adj[a].push((b, 1.0)),
                    1 => adj[b].push((a, 1.0)),
                    _ => {
                        adj[a].push((b, 1.0));
                        adj[b].push((a, 1.0));
                    }
                }
            }
        }
    }
    SparseDigraph::from_adjacency(adj).unwrap()
}

/// Trimap of `w x h` with a 64-valued border band, a 255 center block
/// and 128 in between.
pub fn synthetic_trimap(w: usize, h: usize, band: usize) -> lapseg_core::GrayImage {
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let edge = x.min(y).min(w - 1 - x).min(h - 1 - y);
            if edge < band {
                64
            } else if x > w / 3 && x < 2 * w / 3 && y > h / 3 && y < 2 * h / 3 {
                255
            } else {
                128
            }
        })
        .collect();
    lapseg_core::GrayImage { width: w, height: h, data }
}
