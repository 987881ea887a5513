//! Linear and mixed-integer programming.
//!
//! [`MilpModel`] is a plain column/row container (always minimisation).
//! [`solve_lp`] runs a two-phase bounded dense simplex and [`solve_milp`]
//! wraps it in best-bound branch-and-bound with depth-first dives that
//! warm start each child from the parent basis through the dual simplex.
//! [`lpfile`] reads and writes the CPLEX LP text format.
//!
//! The dense tableau is intentional: the scheduling models solved here have
//! at most a few thousand columns.

mod bnb;
pub mod lpfile;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bnb::{solve_milp, MilpOptions};
pub use lpfile::{export_lp, read_lp, read_lp_str, write_lp_string};
pub use simplex::solve_lp;

/// Primal feasibility tolerance on rows and bounds.
pub const FEAS_TOL: f64 = 1e-7;
/// Distance from the nearest integer accepted as integral.
pub const INT_TOL: f64 = 1e-6;
/// Smallest pivot magnitude accepted in ratio tests.
pub const PIVOT_TOL: f64 = 1e-9;
/// Default simplex iteration limit per LP solve.
pub const DEFAULT_ITER_LIMIT: usize = 50_000;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("column {0} has lower bound {1} above upper bound {2}")]
    InconsistentBounds(String, f64, f64),
    #[error("row {row} references column {col}, but the model has {ncols} columns")]
    UnknownColumn { row: String, col: usize, ncols: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("LP file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A minimisation problem `min c·x  s.t.  rows, lower <= x <= upper`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MilpModel {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_column(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        cost: f64,
        integer: bool,
    ) -> usize {
        self.columns.push(Column { name: name.into(), lower, upper, cost, integer });
        self.columns.len() - 1
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        self.add_column(name, lower, upper, cost, false)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.add_column(name, 0.0, 1.0, cost, true)
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { name: name.into(), coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_binary(&self, j: usize) -> bool {
        let c = &self.columns[j];
        c.integer && c.lower == 0.0 && c.upper == 1.0
    }

    pub fn binary_count(&self) -> usize {
        (0..self.columns.len()).filter(|&j| self.is_binary(j)).count()
    }

    pub fn integer_count(&self) -> usize {
        self.columns.iter().filter(|c| c.integer).count()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let ncols = self.columns.len();
        for c in &self.columns {
            if c.lower > c.upper {
                return Err(LpError::InconsistentBounds(c.name.clone(), c.lower, c.upper));
            }
            if !c.cost.is_finite() || c.lower.is_nan() || c.upper.is_nan() {
                return Err(LpError::NonFinite(format!("column {}", c.name)));
            }
        }
        for r in &self.rows {
            if !r.rhs.is_finite() {
                return Err(LpError::NonFinite(format!("row {}", r.name)));
            }
            for &(j, a) in &r.coeffs {
                if j >= ncols {
                    return Err(LpError::UnknownColumn { row: r.name.clone(), col: j, ncols });
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite(format!("row {}", r.name)));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.columns.iter().zip(x).map(|(c, v)| c.cost * v).sum()
    }

    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Largest violation of any row, bound or integrality requirement
    /// (integrality is reported separately by [`MilpModel::max_integrality_violation`]).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, c) in self.columns.iter().enumerate() {
            worst = worst.max(c.lower - x[j]).max(x[j] - c.upper);
        }
        for (i, r) in self.rows.iter().enumerate() {
            let act = self.row_activity(i, x);
            let v = match r.sense {
                Sense::Le => act - r.rhs,
                Sense::Ge => r.rhs - act,
                Sense::Eq => (act - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn max_integrality_violation(&self, x: &[f64]) -> f64 {
        self.columns
            .iter()
            .zip(x)
            .filter(|(c, _)| c.integer)
            .map(|(_, v)| (v - v.round()).abs())
            .fold(0.0, f64::max)
    }

    /// Lagrangian dual bound `y·b + Σ_j min_{l_j<=x_j<=u_j} (c_j - y·A_j) x_j`,
    /// including the row slacks. Returns `-inf` when `y` is not dual feasible
    /// (beyond `tol`) on an unbounded direction.
    pub fn dual_bound(&self, y: &[f64], tol: f64) -> f64 {
        let mut reduced: Vec<f64> = self.columns.iter().map(|c| c.cost).collect();
        let mut bound = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            bound += y[i] * r.rhs;
            for &(j, a) in &r.coeffs {
                reduced[j] -= y[i] * a;
            }
            // slack s_i with a·x + s = b; reduced cost of s_i is -y_i
            let (sl, su) = match r.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            bound += box_min(-y[i], sl, su, tol);
        }
        for (c, d) in self.columns.iter().zip(&reduced) {
            bound += box_min(*d, c.lower, c.upper, tol);
        }
        bound
    }
}

fn box_min(d: f64, lo: f64, hi: f64, tol: f64) -> f64 {
    if d > tol {
        if lo.is_finite() { d * lo } else { f64::NEG_INFINITY }
    } else if d < -tol {
        if hi.is_finite() { d * hi } else { f64::NEG_INFINITY }
    } else {
        // near-zero reduced cost: charge it at whichever finite bound is worse
        let a = if lo.is_finite() { d * lo } else { 0.0 };
        let b = if hi.is_finite() { d * hi } else { 0.0 };
        a.min(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilpResult {
    pub status: Status,
    pub objective: f64,
    /// One value per model column; empty when no solution is available.
    pub values: Vec<f64>,
    /// Child nodes solved by branch-and-bound (0 when the root relaxation is integral).
    pub node_count: usize,
    pub simplex_iterations: usize,
    /// Relative gap between incumbent and best remaining bound.
    pub gap: f64,
    /// Row duals of the final LP basis (LP solves only).
    pub duals: Option<Vec<f64>>,
}

impl MilpResult {
    pub(crate) fn without_solution(status: Status, iterations: usize) -> Self {
        Self {
            status,
            objective: f64::NAN,
            values: Vec::new(),
            node_count: 0,
            simplex_iterations: iterations,
            gap: f64::INFINITY,
            duals: None,
        }
    }

    pub fn has_solution(&self) -> bool {
        !self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_bad_models() {
        let mut m = MilpModel::new();
        m.add_continuous("x", 1.0, 0.0, 1.0);
        assert!(matches!(m.validate(), Err(LpError::InconsistentBounds(..))));

        let mut m = MilpModel::new();
        m.add_continuous("x", 0.0, 1.0, 1.0);
        m.add_row("r", vec![(3, 1.0)], Sense::Le, 1.0);
        assert!(matches!(m.validate(), Err(LpError::UnknownColumn { .. })));

        let mut m = MilpModel::new();
        m.add_continuous("x", 0.0, 1.0, 1.0);
        m.add_row("r", vec![(0, f64::NAN)], Sense::Le, 1.0);
        assert!(matches!(m.validate(), Err(LpError::NonFinite(_))));
    }

    #[test]
    fn violation_measures() {
        let mut m = MilpModel::new();
        let x = m.add_column("x", 0.0, 4.0, 1.0, true);
        m.add_row("r", vec![(x, 1.0)], Sense::Ge, 2.0);
        assert_eq!(m.max_violation(&[1.5]), 0.5);
        assert!((m.max_integrality_violation(&[1.5]) - 0.5).abs() < 1e-15);
        assert_eq!(m.max_violation(&[3.0]), 0.0);
    }

    #[test]
    fn dual_bound_of_trivial_lp() {
        // min x s.t. x >= 2, x in [0, 10]: optimal dual y = 1 gives bound 2
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 10.0, 1.0);
        m.add_row("r", vec![(x, 1.0)], Sense::Ge, 2.0);
        assert!((m.dual_bound(&[1.0], 1e-12) - 2.0).abs() < 1e-12);
        // wrong-signed dual on a >= row is unbounded below
        assert_eq!(m.dual_bound(&[-1.0], 1e-12), f64::NEG_INFINITY);
    }
}
