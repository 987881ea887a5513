//! Branch-and-bound over the simplex relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::{BasisSnapshot, Outcome, Tableau};
use super::{MilpModel, MilpResult, Status, DEFAULT_ITER_LIMIT, FEAS_TOL, INT_TOL};

#[derive(Debug, Clone, Copy)]
pub struct MilpOptions {
    /// Relative optimality gap at which search stops.
    pub gap_tol: f64,
    /// Absolute gap floor, so tiny objectives do not force exhaustive search.
    pub abs_gap: f64,
    pub node_limit: usize,
    /// Simplex iteration limit per LP solve.
    pub iter_limit: usize,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-6, abs_gap: 1e-9, node_limit: 200_000, iter_limit: DEFAULT_ITER_LIMIT }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    basis: Option<BasisSnapshot>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    model: &'a MilpModel,
    opts: MilpOptions,
    int_cols: Vec<usize>,
    incumbent: Option<(f64, Vec<f64>)>,
    iterations: usize,
    nodes: usize,
    seq: usize,
}

impl<'a> Search<'a> {
    fn cutoff(&self) -> f64 {
        match &self.incumbent {
            Some((z, _)) => z - self.opts.abs_gap.max(self.opts.gap_tol * z.abs()),
            None => f64::INFINITY,
        }
    }

    /// Re-optimises a tableau after bound changes; falls back to a cold start
    /// when the warm basis is unusable.
    fn reoptimize(&mut self, tab: &mut Tableau, lower: &[f64], upper: &[f64]) -> Outcome {
        let before = tab.iterations;
        let mut out = tab.dual();
        if out == Outcome::Optimal {
            out = tab.primal();
        }
        self.iterations += tab.iterations - before;
        if matches!(out, Outcome::NotDualFeasible | Outcome::IterLimit) {
            let (cold, o) = Tableau::cold(self.model, lower, upper, self.opts.iter_limit);
            self.iterations += cold.iterations;
            *tab = cold;
            out = o;
        }
        out
    }

    fn most_fractional(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_frac = INT_TOL;
        for &j in &self.int_cols {
            let f = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if f > best_frac {
                best_frac = f;
                best = Some((j, x[j]));
            }
        }
        best
    }

    /// Fixes integers at their rounded values, re-solves the continuous part
    /// and accepts the point only if it verifies against the original model.
    fn try_incumbent(&mut self, tab: &Tableau, lower: &[f64], upper: &[f64]) {
        let x = tab.structural_values();
        let mut lo = lower.to_vec();
        let mut hi = upper.to_vec();
        for &j in &self.int_cols {
            let r = x[j].round();
            lo[j] = r;
            hi[j] = r;
        }
        let mut fixed = tab.clone();
        for &j in &self.int_cols {
            fixed.set_bounds(j, lo[j], hi[j]);
        }
        let out = self.reoptimize(&mut fixed, &lo, &hi);
        if out != Outcome::Optimal {
            return;
        }
        fixed.refine(self.model);
        let mut vals = fixed.structural_values();
        for &j in &self.int_cols {
            vals[j] = lo[j];
        }
        if self.model.max_violation(&vals) > FEAS_TOL {
            return;
        }
        let z = self.model.objective_value(&vals);
        let better = match &self.incumbent {
            Some((best, _)) => z < *best,
            None => true,
        };
        if better {
            self.incumbent = Some((z, vals));
        }
    }

    fn push(&mut self, heap: &mut BinaryHeap<Node>, bound: f64, lower: Vec<f64>, upper: Vec<f64>, basis: BasisSnapshot) {
        self.seq += 1;
        heap.push(Node { bound, seq: self.seq, lower, upper, basis: Some(basis) });
    }

    /// Dives from an optimal node tableau, always following the child nearer
    /// to the fractional value and queueing the sibling.
    fn dive(&mut self, mut tab: Tableau, mut lower: Vec<f64>, mut upper: Vec<f64>, heap: &mut BinaryHeap<Node>) {
        loop {
            let z = tab.objective(self.model);
            if z >= self.cutoff() {
                return;
            }
            let x = tab.structural_values();
            let Some((j, v)) = self.most_fractional(&x) else {
                self.try_incumbent(&tab, &lower, &upper);
                return;
            };
            let down = v.floor();
            let up = v.ceil();
            let go_up = v - down >= 0.5;
            let snap = tab.snapshot();
            if go_up {
                let mut sib_hi = upper.clone();
                sib_hi[j] = down;
                self.push(heap, z, lower.clone(), sib_hi, snap);
                lower[j] = up;
            } else {
                let mut sib_lo = lower.clone();
                sib_lo[j] = up;
                self.push(heap, z, sib_lo, upper.clone(), snap);
                upper[j] = down;
            }
            if self.nodes >= self.opts.node_limit {
                let snap = tab.snapshot();
                self.push(heap, z, lower, upper, snap);
                return;
            }
            self.nodes += 1;
            tab.set_bounds(j, lower[j], upper[j]);
            match self.reoptimize(&mut tab, &lower, &upper) {
                Outcome::Optimal => {}
                _ => return,
            }
        }
    }

    fn solve_node(&mut self, node: Node) -> Option<Tableau> {
        self.nodes += 1;
        let warm = node.basis.as_ref().and_then(|b| {
            Tableau::from_snapshot(self.model, &node.lower, &node.upper, b, self.opts.iter_limit)
        });
        let mut tab = match warm {
            Some(t) => t,
            None => {
                let (t, o) = Tableau::cold(self.model, &node.lower, &node.upper, self.opts.iter_limit);
                self.iterations += t.iterations;
                return (o == Outcome::Optimal).then_some(t);
            }
        };
        (self.reoptimize(&mut tab, &node.lower, &node.upper) == Outcome::Optimal).then_some(tab)
    }
}

/// Solves a mixed-integer model by best-bound branch-and-bound.
pub fn solve_milp(model: &MilpModel, opts: &MilpOptions) -> MilpResult {
    if model.validate().is_err() {
        return MilpResult::without_solution(Status::Infeasible, 0);
    }
    let mut lower: Vec<f64> = model.columns.iter().map(|c| c.lower).collect();
    let mut upper: Vec<f64> = model.columns.iter().map(|c| c.upper).collect();
    let int_cols: Vec<usize> = (0..model.num_columns()).filter(|&j| model.columns[j].integer).collect();
    for &j in &int_cols {
        lower[j] = lower[j].ceil();
        upper[j] = upper[j].floor();
        if lower[j] > upper[j] {
            return MilpResult::without_solution(Status::Infeasible, 0);
        }
    }

    let (root, out) = Tableau::cold(model, &lower, &upper, opts.iter_limit);
    let mut search = Search {
        model,
        opts: *opts,
        int_cols,
        incumbent: None,
        iterations: root.iterations,
        nodes: 0,
        seq: 0,
    };
    match out {
        Outcome::Optimal => {}
        Outcome::Unbounded => return MilpResult::without_solution(Status::Unbounded, search.iterations),
        Outcome::IterLimit => return MilpResult::without_solution(Status::IterLimit, search.iterations),
        _ => return MilpResult::without_solution(Status::Infeasible, search.iterations),
    }
    let root_bound = root.objective(model);

    let mut heap = BinaryHeap::new();
    search.dive(root, lower, upper, &mut heap);
    let mut hit_limit = false;
    while let Some(node) = heap.pop() {
        if node.bound >= search.cutoff() {
            // heap is ordered by bound: everything left is pruned
            heap.clear();
            break;
        }
        if search.nodes >= search.opts.node_limit {
            heap.push(node);
            hit_limit = true;
            break;
        }
        let (lo, hi) = (node.lower.clone(), node.upper.clone());
        if let Some(tab) = search.solve_node(node) {
            search.dive(tab, lo, hi, &mut heap);
        }
        if search.nodes >= search.opts.node_limit && !heap.is_empty() {
            hit_limit = true;
            break;
        }
    }

    let best_bound = heap.peek().map(|n| n.bound).unwrap_or(f64::INFINITY);
    let iterations = search.iterations;
    let nodes = search.nodes;
    match search.incumbent {
        Some((z, values)) => {
            let gap = if hit_limit { (z - best_bound.max(root_bound).min(z)) / z.abs().max(1.0) } else { 0.0 };
            MilpResult {
                status: if hit_limit { Status::IterLimit } else { Status::Optimal },
                objective: z,
                values,
                node_count: nodes,
                simplex_iterations: iterations,
                gap,
                duals: None,
            }
        }
        None => MilpResult::without_solution(if hit_limit { Status::IterLimit } else { Status::Infeasible }, iterations),
    }
}
