//! Iterative label propagation shared by both stages.
//!
//! Every node carries a domination vector: its degree of membership in each
//! class. Seed rows are one-hot and clamped; every other row is repeatedly
//! replaced by the weighted mean of its out-neighbors' rows (a synchronous,
//! Jacobi-style update) until the average maximum domination level stops
//! increasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::graphs::SparseDigraph;
use crate::resample::LabelMap;

/// Row-stochastic `n x C` class-membership matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DominationMatrix {
    classes: usize,
    data: Vec<f64>,
    labeled: Vec<bool>,
}

impl DominationMatrix {
    /// Wraps raw rows; `labeled` marks rows that must stay fixed.
    pub fn from_parts(classes: usize, data: Vec<f64>, labeled: Vec<bool>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::param("class count must be >= 1"));
        }
        if data.len() != labeled.len() * classes {
            return Err(Error::dim(format!(
                "{} values for {} rows of {classes} classes",
                data.len(),
                labeled.len()
            )));
        }
        Ok(Self {
            classes,
            data,
            labeled,
        })
    }

    pub fn len(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled
    }

    pub fn unlabeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| !l).count()
    }

    /// Makes row `i` a clamped one-hot row of 0-based class `class`.
    pub fn clamp(&mut self, i: usize, class: usize) {
        let row = &mut self.data[i * self.classes..(i + 1) * self.classes];
        row.fill(0.0);
        row[class] = 1.0;
        self.labeled[i] = true;
    }

    /// 0-based class with the largest domination; ties go to the lowest index.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        best
    }

    pub fn row_max(&self, i: usize) -> f64 {
        self.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One-hot clamped rows for seeds, uniform `1/C` rows elsewhere.
pub fn init_domination(labels: &[u16], classes: usize) -> Result<DominationMatrix> {
    if classes == 0 {
        return Err(Error::param("class count must be >= 1"));
    }
    let uniform = 1.0 / classes as f64;
    let mut m = DominationMatrix {
        classes,
        data: vec![uniform; labels.len() * classes],
        labeled: vec![false; labels.len()],
    };
    for (i, &l) in labels.iter().enumerate() {
        match usize::from(l) {
            0 => {}
            c if c <= classes => m.clamp(i, c - 1),
            c => {
                return Err(Error::param(format!(
                    "label {c} at node {i} exceeds class count {classes}"
                )))
            }
        }
    }
    Ok(m)
}

/// Mean over unlabeled rows of the row maximum; `None` when every row is labeled.
pub fn avg_max_domination(dom: &DominationMatrix) -> Option<f64> {
    let (sum, count) = (0..dom.len())
        .filter(|&i| !dom.is_labeled(i))
        .fold((0.0, 0usize), |(s, n), i| (s + dom.row_max(i), n + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Stop rule of [`run_stage`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceState {
    /// Iterations between two checkpoints.
    pub check_interval: usize,
    /// Minimum increase of the average maximum domination between checkpoints.
    pub omega: f64,
    pub max_iterations: usize,
    /// Average at the last checkpoint (or at start).
    pub last_avg: f64,
    pub iteration: usize,
}

impl ConvergenceState {
    pub fn new(check_interval: usize, omega: f64, max_iterations: usize) -> Result<Self> {
        if check_interval == 0 {
            return Err(Error::param("check interval must be >= 1"));
        }
        if omega.is_nan() || omega <= 0.0 {
            return Err(Error::param(format!("omega must be > 0, got {omega}")));
        }
        Ok(Self {
            check_interval,
            omega,
            max_iterations,
            last_avg: f64::NAN,
            iteration: 0,
        })
    }
}

impl Default for ConvergenceState {
    fn default() -> Self {
        Self::new(10, 1e-4, 100_000).expect("valid defaults")
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub dom: DominationMatrix,
    pub iterations: usize,
    /// False when the iteration cap stopped the loop.
    pub converged: bool,
    pub final_avg: Option<f64>,
}

const ROWS_PER_TASK: usize = 512;

/// Double-buffered propagation over a fixed set of rows.
struct Propagator<'g> {
    graph: &'g SparseDigraph,
    active: Vec<usize>,
    next: Vec<f64>,
}

impl<'g> Propagator<'g> {
    fn new(graph: &'g SparseDigraph, dom: &DominationMatrix) -> Result<Self> {
        if graph.node_count() != dom.len() {
            return Err(Error::dim(format!(
                "graph has {} nodes, domination matrix {} rows",
                graph.node_count(),
                dom.len()
            )));
        }
        let active: Vec<usize> = (0..dom.len())
            .filter(|&i| !dom.is_labeled(i) && graph.out_degree(i) > 0)
            .collect();
        let next = vec![0.0; active.len() * dom.classes];
        Ok(Self { graph, active, next })
    }

    /// One synchronous update: every active row becomes the weighted mean of
    /// its neighbors' rows from before the step.
    fn step(&mut self, dom: &mut DominationMatrix, exec: Execution) {
        let c = dom.classes;
        let (graph, active, prev) = (self.graph, &self.active, &dom.data);
        exec::for_each_chunk_mut(exec, &mut self.next, ROWS_PER_TASK * c, |chunk_idx, out| {
            let first = chunk_idx * ROWS_PER_TASK;
            for (r, row_out) in out.chunks_exact_mut(c).enumerate() {
                let (targets, weights) = graph.out_edges(active[first + r]);
                match c {
                    2 => weighted_mean_fixed::<2>(targets, weights, prev, row_out),
                    3 => weighted_mean_fixed::<3>(targets, weights, prev, row_out),
                    4 => weighted_mean_fixed::<4>(targets, weights, prev, row_out),
                    _ => weighted_mean(targets, weights, prev, row_out),
                }
            }
        });
        for (r, &i) in self.active.iter().enumerate() {
            dom.data[i * c..(i + 1) * c].copy_from_slice(&self.next[r * c..(r + 1) * c]);
        }
    }
}

fn weighted_mean(targets: &[u32], weights: &[f64], prev: &[f64], out: &mut [f64]) {
    let c = out.len();
    out.fill(0.0);
    let mut total = 0.0;
    for (&j, &w) in targets.iter().zip(weights) {
        let src = &prev[j as usize * c..(j as usize + 1) * c];
        for (o, &v) in out.iter_mut().zip(src) {
            *o += w * v;
        }
        total += w;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// [`weighted_mean`] with the class count known at compile time; same
/// operation order, so the results are identical.
fn weighted_mean_fixed<const C: usize>(targets: &[u32], weights: &[f64], prev: &[f64], out: &mut [f64]) {
    let mut acc = [0.0; C];
    let mut total = 0.0;
    for (&j, &w) in targets.iter().zip(weights) {
        let start = j as usize * C;
        let src: &[f64; C] = prev[start..start + C].try_into().expect("row of C classes");
        for (a, &v) in acc.iter_mut().zip(src) {
            *a += w * v;
        }
        total += w;
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = a / total;
    }
}

/// Returns the state after one synchronous update. Clamped rows and
/// unlabeled rows without out-edges are copied unchanged.
pub fn propagation_step(
    graph: &SparseDigraph,
    dom: &DominationMatrix,
    exec: Execution,
) -> Result<DominationMatrix> {
    let mut out = dom.clone();
    Propagator::new(graph, dom)?.step(&mut out, exec);
    Ok(out)
}

/// Iterates [`propagation_step`] until the average maximum domination grows
/// by less than `omega` between two checkpoints `check_interval` steps apart.
pub fn run_stage(
    graph: &SparseDigraph,
    dom: DominationMatrix,
    conv: ConvergenceState,
    exec: Execution,
) -> Result<StageOutcome> {
    run_stage_observed(graph, dom, conv, exec, &mut |_, _| {})
}

/// [`run_stage`] that calls `observer(iteration, state)` after every step.
pub fn run_stage_observed(
    graph: &SparseDigraph,
    mut dom: DominationMatrix,
    mut conv: ConvergenceState,
    exec: Execution,
    observer: &mut dyn FnMut(usize, &DominationMatrix),
) -> Result<StageOutcome> {
    let mut prop = Propagator::new(graph, &dom)?;
    let Some(start) = avg_max_domination(&dom) else {
        return Ok(StageOutcome {
            dom,
            iterations: 0,
            converged: true,
            final_avg: None,
        });
    };
    conv.last_avg = start;
    conv.iteration = 0;
    let mut converged = false;
    while conv.iteration < conv.max_iterations {
        prop.step(&mut dom, exec);
        conv.iteration += 1;
        observer(conv.iteration, &dom);
        if conv.iteration.is_multiple_of(conv.check_interval) {
            let avg = avg_max_domination(&dom).unwrap_or(start);
            // Signed: a decrease also ends the stage.
            let increase = avg - conv.last_avg;
            conv.last_avg = avg;
            if increase < conv.omega {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("propagation stopped at the cap of {} iterations", conv.max_iterations);
    }
    Ok(StageOutcome {
        final_avg: avg_max_domination(&dom),
        dom,
        iterations: conv.iteration,
        converged,
    })
}

fn check_aligned(dom: &DominationMatrix, labels: &LabelMap) -> Result<()> {
    if dom.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} domination rows for {} pixels",
            dom.len(),
            labels.len()
        )));
    }
    if dom.classes() != labels.num_classes() {
        return Err(Error::dim(format!(
            "{} domination classes, label map has {}",
            dom.classes(),
            labels.num_classes()
        )));
    }
    Ok(())
}

/// Labels every still-unlabeled pixel whose strongest class reaches `tau`.
pub fn threshold_label(dom: &DominationMatrix, labels: &LabelMap, tau: f64) -> Result<LabelMap> {
    check_aligned(dom, labels)?;
    let mut out = labels.clone();
    for i in 0..labels.len() {
        if labels.labels()[i] == 0 && dom.row_max(i) >= tau {
            out.set(i, (dom.argmax(i) + 1) as u16);
        }
    }
    Ok(out)
}

/// Gives every remaining unlabeled pixel its strongest class.
pub fn argmax_label(dom: &DominationMatrix, labels: &LabelMap) -> Result<LabelMap> {
    check_aligned(dom, labels)?;
    let mut out = labels.clone();
    for i in 0..labels.len() {
        if labels.labels()[i] == 0 {
            out.set(i, (dom.argmax(i) + 1) as u16);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_kernels_match_generic() {
        let prev: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let targets = [0u32, 3, 7, 9];
        let weights = [0.3, 0.9, 1e-3, 0.55];
        for c in 2..=4 {
            let mut a = vec![0.0; c];
            let mut b = vec![0.0; c];
            weighted_mean(&targets, &weights, &prev, &mut a);
            match c {
                2 => weighted_mean_fixed::<2>(&targets, &weights, &prev, &mut b),
                3 => weighted_mean_fixed::<3>(&targets, &weights, &prev, &mut b),
                _ => weighted_mean_fixed::<4>(&targets, &weights, &prev, &mut b),
            }
            assert_eq!(a, b);
        }
    }

    fn rows(m: &DominationMatrix) -> Vec<Vec<f64>> {
        (0..m.len()).map(|i| m.row(i).to_vec()).collect()
    }

    #[test]
    fn init_cases() {
        let m = init_domination(&[1, 0], 2).unwrap();
        assert_eq!(rows(&m), vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(m.is_labeled(0) && !m.is_labeled(1));
        let m = init_domination(&[0], 4).unwrap();
        assert_eq!(m.row(0), &[0.25; 4]);
        assert!(init_domination(&[], 3).unwrap().is_empty());
        assert!(init_domination(&[1], 0).is_err());
        assert!(init_domination(&[3], 2).is_err());
    }

    /// Node 0 unlabeled, pointing to the given labeled neighbors.
    fn star(neighbors: &[(u16, f64)]) -> (SparseDigraph, DominationMatrix) {
        let mut labels = vec![0u16];
        labels.extend(neighbors.iter().map(|n| n.0));
        let mut adj = vec![neighbors
            .iter()
            .enumerate()
            .map(|(k, n)| (k + 1, n.1))
            .collect::<Vec<_>>()];
        adj.extend(neighbors.iter().map(|_| Vec::new()));
        (
            SparseDigraph::from_adjacency(adj).unwrap(),
            init_domination(&labels, 2).unwrap(),
        )
    }

    #[test]
    fn weighted_means() {
        for (nb, expect) in [
            (vec![(1, 0.3), (1, 0.9)], [1.0, 0.0]),
            (vec![(1, 0.5), (2, 0.5)], [0.5, 0.5]),
            (vec![(1, 0.75), (2, 0.25)], [0.75, 0.25]),
        ] {
            let (g, d) = star(&nb);
            let next = propagation_step(&g, &d, Execution::Sequential).unwrap();
            assert_eq!(next.row(0), &expect);
            assert_eq!(next.row(1), d.row(1));
        }
    }

    #[test]
    fn avg_max_cases() {
        let m = DominationMatrix::from_parts(2, vec![1.0, 0.0, 0.5, 0.5], vec![false; 2]).unwrap();
        assert_eq!(avg_max_domination(&m), Some(0.75));
        assert_eq!(avg_max_domination(&init_domination(&[0, 0, 0], 2).unwrap()), Some(0.5));
        let m = DominationMatrix::from_parts(2, vec![0.0, 1.0, 1.0, 0.0], vec![false; 2]).unwrap();
        assert_eq!(avg_max_domination(&m), Some(1.0));
        assert_eq!(avg_max_domination(&init_domination(&[1, 2], 2).unwrap()), None);
    }

    fn path4() -> (SparseDigraph, DominationMatrix) {
        let adj = vec![vec![], vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0), (3, 1.0)], vec![]];
        (
            SparseDigraph::from_adjacency(adj).unwrap(),
            init_domination(&[1, 0, 0, 2], 2).unwrap(),
        )
    }

    #[test]
    fn path_fixed_point() {
        let (g, d) = path4();
        let conv = ConvergenceState::new(10, 1e-10, 100_000).unwrap();
        let out = run_stage(&g, d, conv, Execution::Sequential).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations % 10, 0);
        let v2 = out.dom.row(1);
        let v3 = out.dom.row(2);
        assert!((v2[0] - 2.0 / 3.0).abs() < 1e-6 && (v2[1] - 1.0 / 3.0).abs() < 1e-6);
        assert!((v3[0] - 1.0 / 3.0).abs() < 1e-6 && (v3[1] - 2.0 / 3.0).abs() < 1e-6);

        let labels = LabelMap::new(4, 1, vec![1, 0, 0, 2], 2).unwrap();
        let final_labels = argmax_label(&out.dom, &labels).unwrap();
        assert_eq!(final_labels.labels(), &[1, 1, 2, 2]);
    }

    #[test]
    fn single_source_floods_everything() {
        // ring of 6 with one seed at node 0
        let n = 6;
        let adj: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                if i == 0 {
                    vec![]
                } else {
                    vec![((i + n - 1) % n, 0.8), ((i + 1) % n, 0.4)]
                }
            })
            .collect();
        let g = SparseDigraph::from_adjacency(adj).unwrap();
        let mut labels = vec![0u16; n];
        labels[0] = 3;
        let d = init_domination(&labels, 3).unwrap();
        let conv = ConvergenceState::new(10, 1e-12, 100_000).unwrap();
        let out = run_stage(&g, d, conv, Execution::Parallel).unwrap();
        for i in 0..n {
            assert!((out.dom.row(i)[2] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nothing_to_do() {
        let g = SparseDigraph::from_adjacency(vec![vec![], vec![]]).unwrap();
        let d = init_domination(&[1, 2], 2).unwrap();
        let out = run_stage(&g, d, ConvergenceState::default(), Execution::Sequential).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
    }

    #[test]
    fn isolated_unlabeled_rows_pass_through() {
        let g = SparseDigraph::from_adjacency(vec![vec![], vec![]]).unwrap();
        let d = init_domination(&[1, 0], 2).unwrap();
        let out = run_stage(&g, d.clone(), ConvergenceState::default(), Execution::Sequential).unwrap();
        assert_eq!(out.dom, d);
        assert_eq!(out.iterations, 10);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (g, d) = path4();
        let conv = ConvergenceState::new(10, 1e-10, 15).unwrap();
        let out = run_stage(&g, d, conv, Execution::Sequential).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 15);
    }

    #[test]
    fn mismatched_graph() {
        let (g, _) = path4();
        let d = init_domination(&[1, 0], 2).unwrap();
        assert!(matches!(
            propagation_step(&g, &d, Execution::Sequential),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn bad_convergence_parameters() {
        assert!(ConvergenceState::new(0, 1e-4, 10).is_err());
        assert!(ConvergenceState::new(10, 0.0, 10).is_err());
    }

    #[test]
    fn labeling_rules() {
        let dom = DominationMatrix::from_parts(
            2,
            vec![0.9995, 0.0005, 0.95, 0.05, 0.5, 0.5, 0.3, 0.7],
            vec![false; 4],
        )
        .unwrap();
        let labels = LabelMap::empty(4, 1, 2);
        let t = threshold_label(&dom, &labels, 0.999).unwrap();
        assert_eq!(t.labels(), &[1, 0, 0, 0]);
        let a = argmax_label(&dom, &labels).unwrap();
        assert_eq!(a.labels(), &[1, 1, 1, 2]);

        let dom = DominationMatrix::from_parts(3, vec![1.0, 0.0, 0.0], vec![false]).unwrap();
        let seeded = LabelMap::new(1, 1, vec![3], 3).unwrap();
        assert_eq!(argmax_label(&dom, &seeded).unwrap().labels(), &[3]);
        assert_eq!(threshold_label(&dom, &seeded, 0.999).unwrap().labels(), &[3]);
    }

    fn random_instance() -> impl Strategy<Value = (SparseDigraph, DominationMatrix)> {
        (3usize..40, 2usize..5).prop_flat_map(|(n, c)| {
            (
                proptest::collection::vec(0..=c as u16, n),
                proptest::collection::vec(proptest::collection::vec((0..n, 0.01f64..1.0), 0..6), n),
            )
                .prop_map(move |(labels, adj)| {
                    let adj = adj
                        .into_iter()
                        .enumerate()
                        .map(|(i, l)| {
                            if labels[i] != 0 {
                                return vec![];
                            }
                            l.into_iter().filter(|&(j, _)| j != i).collect()
                        })
                        .collect();
                    (
                        SparseDigraph::from_adjacency(adj).unwrap(),
                        init_domination(&labels, c).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn steps_keep_rows_stochastic_and_seeds_fixed((g, d) in random_instance()) {
            let mut cur = d.clone();
            for _ in 0..25 {
                cur = propagation_step(&g, &cur, Execution::Parallel).unwrap();
                for i in 0..cur.len() {
                    let s: f64 = cur.row(i).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                    if d.is_labeled(i) {
                        prop_assert_eq!(cur.row(i), d.row(i));
                    }
                }
            }
        }

        #[test]
        fn sequential_and_parallel_are_bit_identical((g, d) in random_instance()) {
            let conv = ConvergenceState::new(10, 1e-8, 2_000).unwrap();
            let a = run_stage(&g, d.clone(), conv, Execution::Sequential).unwrap();
            let b = run_stage(&g, d, conv, Execution::Parallel).unwrap();
            prop_assert_eq!(a.dom, b.dom);
            prop_assert_eq!(a.iterations, b.iterations);
        }
    }
}
