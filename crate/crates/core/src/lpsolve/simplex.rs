//! Bounded dense-tableau simplex (primal two-phase and dual).
//!
//! Variable layout: structural columns `0..n`, one slack per row `n..n+m`
//! (`a_i·x + s_i = b_i`), then phase-one artificials. Slack bounds encode the
//! row sense: `<=` gives `s >= 0`, `>=` gives `s <= 0`, `=` fixes `s = 0`.

use super::{MilpModel, MilpResult, Sense, Status, DEFAULT_ITER_LIMIT, FEAS_TOL, PIVOT_TOL};

const DUAL_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable sitting at zero.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    /// Dual simplex was asked to start from a dual-infeasible basis.
    NotDualFeasible,
}

/// Compact description of a basis, enough to rebuild a tableau.
#[derive(Debug, Clone)]
pub(crate) struct BasisSnapshot {
    pub basic: Vec<usize>,
    pub at_upper: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau {
    pub m: usize,
    pub n: usize,
    pub ncols: usize,
    /// Row-major `m × ncols` matrix `B⁻¹ [A | I | art]`.
    t: Vec<f64>,
    /// Reduced costs for the active objective.
    d: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    cost: Vec<f64>,
    pub basis: Vec<usize>,
    pub status: Vec<VarStatus>,
    pub x: Vec<f64>,
    enterable: Vec<bool>,
    /// Sign of each artificial's coefficient in its row (index by `j - n - m`).
    art_sign: Vec<f64>,
    art_row: Vec<usize>,
    pub iterations: usize,
    pub iter_limit: usize,
}

fn slack_bounds(sense: Sense) -> (f64, f64) {
    match sense {
        Sense::Le => (0.0, f64::INFINITY),
        Sense::Ge => (f64::NEG_INFINITY, 0.0),
        Sense::Eq => (0.0, 0.0),
    }
}

fn resting_value(lo: f64, hi: f64) -> (f64, VarStatus) {
    if lo.is_finite() {
        (lo, VarStatus::AtLower)
    } else if hi.is_finite() {
        (hi, VarStatus::AtUpper)
    } else {
        (0.0, VarStatus::Free)
    }
}

impl Tableau {
    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    /// Slack basis for the given column bounds; artificials are added for rows
    /// whose slack cannot absorb the residual.
    fn with_slack_basis(model: &MilpModel, lower: &[f64], upper: &[f64], allow_artificials: bool) -> Self {
        let n = model.num_columns();
        let m = model.num_rows();
        let mut x = vec![0.0; n + m];
        let mut status = vec![VarStatus::Basic; n + m];
        let mut lo = Vec::with_capacity(n + m);
        let mut hi = Vec::with_capacity(n + m);
        let mut cost = Vec::with_capacity(n + m);
        for j in 0..n {
            let (v, s) = resting_value(lower[j], upper[j]);
            x[j] = v;
            status[j] = s;
            lo.push(lower[j]);
            hi.push(upper[j]);
            cost.push(model.columns[j].cost);
        }
        for r in &model.rows {
            let (a, b) = slack_bounds(r.sense);
            lo.push(a);
            hi.push(b);
            cost.push(0.0);
        }

        let mut resid: Vec<f64> = model.rows.iter().map(|r| r.rhs).collect();
        for (i, r) in model.rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                resid[i] -= a * x[j];
            }
        }

        let mut art_rows = Vec::new();
        let mut art_sign = Vec::new();
        let mut basis = vec![0; m];
        for i in 0..m {
            let s = n + i;
            let r = resid[i];
            if !allow_artificials || (r >= lo[s] - FEAS_TOL && r <= hi[s] + FEAS_TOL) {
                basis[i] = s;
                x[s] = r;
                status[s] = VarStatus::Basic;
            } else {
                let clamped = r.clamp(lo[s], hi[s]);
                x[s] = clamped;
                status[s] = if clamped == lo[s] { VarStatus::AtLower } else { VarStatus::AtUpper };
                art_rows.push(i);
                art_sign.push(if r - clamped >= 0.0 { 1.0 } else { -1.0 });
            }
        }

        let na = art_rows.len();
        let ncols = n + m + na;
        let mut t = vec![0.0; m * ncols];
        for (i, r) in model.rows.iter().enumerate() {
            let row = &mut t[i * ncols..(i + 1) * ncols];
            for &(j, a) in &r.coeffs {
                row[j] += a;
            }
            row[n + i] = 1.0;
        }
        for (k, (&i, &sg)) in art_rows.iter().zip(&art_sign).enumerate() {
            let a = n + m + k;
            let row = &mut t[i * ncols..(i + 1) * ncols];
            if sg < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row[a] = 1.0;
            basis[i] = a;
            x.push((resid[i] - x[n + i]).abs());
            status.push(VarStatus::Basic);
            lo.push(0.0);
            hi.push(f64::INFINITY);
            cost.push(0.0);
        }

        Tableau {
            m,
            n,
            ncols,
            t,
            d: vec![0.0; ncols],
            lower: lo,
            upper: hi,
            cost,
            basis,
            status,
            x,
            enterable: vec![true; ncols],
            art_sign,
            art_row: art_rows,
            iterations: 0,
            iter_limit: DEFAULT_ITER_LIMIT,
        }
    }

    fn price(&mut self, cost: &[f64]) {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, &tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for i in 0..self.m {
            d[self.basis[i]] = 0.0;
        }
        self.d = d;
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let piv = self.t[r * nc + q];
        {
            let row_r = &mut self.t[r * nc..(r + 1) * nc];
            let inv = 1.0 / piv;
            row_r.iter_mut().for_each(|v| *v *= inv);
            row_r[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (row_r, after) = rest.split_at_mut(nc);
        for row in before.chunks_exact_mut(nc).chain(after.chunks_exact_mut(nc)) {
            let f = row[q];
            if f != 0.0 {
                for (v, &p) in row.iter_mut().zip(row_r.iter()) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (v, &p) in self.d.iter_mut().zip(row_r.iter()) {
                *v -= f * p;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.status[q] = VarStatus::Basic;
        // caller fixes the leaving status; default to the bound it sits on
        self.status[leaving] = if self.x[leaving] <= self.lower[leaving] {
            VarStatus::AtLower
        } else if self.x[leaving] >= self.upper[leaving] {
            VarStatus::AtUpper
        } else if self.lower[leaving].is_finite() {
            VarStatus::AtLower
        } else if self.upper[leaving].is_finite() {
            VarStatus::AtUpper
        } else {
            VarStatus::Free
        };
        self.iterations += 1;
    }

    fn move_nonbasic(&mut self, q: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        self.x[q] += delta;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a != 0.0 {
                let b = self.basis[i];
                self.x[b] -= a * delta;
            }
        }
    }

    /// Bounded primal simplex on the current reduced costs. Requires a
    /// primal-feasible basis.
    pub(crate) fn primal(&mut self) -> Outcome {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.iter_limit {
                return Outcome::IterLimit;
            }
            let bland = degenerate >= DEGENERATE_SWITCH;
            let Some((q, dir)) = self.choose_entering(bland) else {
                return Outcome::Optimal;
            };

            let span = self.upper[q] - self.lower[q];
            let (leave, theta) = self.ratio_test(q, dir, bland);
            match leave {
                None if !span.is_finite() => return Outcome::Unbounded,
                Some((r, _)) if theta < span => {
                    let (r_leave_to_upper, bound) = {
                        let b = self.basis[r];
                        let rate = -dir * self.at(r, q);
                        if rate < 0.0 { (false, self.lower[b]) } else { (true, self.upper[b]) }
                    };
                    let b = self.basis[r];
                    self.move_nonbasic(q, dir * theta);
                    self.x[b] = bound;
                    self.pivot(r, q);
                    self.status[b] = if r_leave_to_upper { VarStatus::AtUpper } else { VarStatus::AtLower };
                }
                _ => {
                    // bound flip of the entering variable
                    let target = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                    let delta = target - self.x[q];
                    self.move_nonbasic(q, delta);
                    self.x[q] = target;
                    self.status[q] = if dir > 0.0 { VarStatus::AtUpper } else { VarStatus::AtLower };
                    self.iterations += 1;
                }
            }
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.ncols {
            if !self.enterable[j] || self.lower[j] == self.upper[j] {
                continue;
            }
            let dj = self.d[j];
            let (ok, dir) = match self.status[j] {
                VarStatus::Basic => (false, 0.0),
                VarStatus::AtLower => (dj < -DUAL_TOL, 1.0),
                VarStatus::AtUpper => (dj > DUAL_TOL, -1.0),
                VarStatus::Free => (dj.abs() > DUAL_TOL, -dj.signum()),
            };
            if !ok {
                continue;
            }
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    /// Harris two-pass ratio test. Returns the blocking row (with its pivot)
    /// and the step length.
    fn ratio_test(&self, q: usize, dir: f64, bland: bool) -> (Option<(usize, f64)>, f64) {
        let mut relaxed_min = f64::INFINITY;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let b = self.basis[i];
            let rate = -dir * a;
            let lim = if rate < 0.0 {
                if !self.lower[b].is_finite() {
                    continue;
                }
                (self.x[b] - self.lower[b] + FEAS_TOL) / -rate
            } else {
                if !self.upper[b].is_finite() {
                    continue;
                }
                (self.upper[b] - self.x[b] + FEAS_TOL) / rate
            };
            relaxed_min = relaxed_min.min(lim);
        }
        if !relaxed_min.is_finite() {
            return (None, f64::INFINITY);
        }
        let mut chosen: Option<(usize, f64)> = None;
        let mut chosen_theta = f64::INFINITY;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let b = self.basis[i];
            let rate = -dir * a;
            let lim = if rate < 0.0 {
                if !self.lower[b].is_finite() {
                    continue;
                }
                (self.x[b] - self.lower[b]) / -rate
            } else {
                if !self.upper[b].is_finite() {
                    continue;
                }
                (self.upper[b] - self.x[b]) / rate
            };
            if lim > relaxed_min {
                continue;
            }
            let better = match chosen {
                None => true,
                Some((ci, ca)) => {
                    if bland {
                        b < self.basis[ci]
                    } else {
                        a.abs() > ca.abs()
                    }
                }
            };
            if better {
                chosen = Some((i, a));
                chosen_theta = lim.max(0.0);
            }
        }
        (chosen, chosen_theta)
    }

    fn dual_feasible(&self) -> bool {
        (0..self.ncols).all(|j| {
            if !self.enterable[j] || self.lower[j] == self.upper[j] {
                return true;
            }
            match self.status[j] {
                VarStatus::Basic => true,
                VarStatus::AtLower => self.d[j] >= -1e-7,
                VarStatus::AtUpper => self.d[j] <= 1e-7,
                VarStatus::Free => self.d[j].abs() <= 1e-7,
            }
        })
    }

    /// Bounded dual simplex from a dual-feasible basis.
    pub(crate) fn dual(&mut self) -> Outcome {
        if !self.dual_feasible() {
            return Outcome::NotDualFeasible;
        }
        loop {
            if self.iterations >= self.iter_limit {
                return Outcome::IterLimit;
            }
            // leaving row: largest bound violation
            let mut r = usize::MAX;
            let mut worst = FEAS_TOL;
            let mut to_lower = true;
            for i in 0..self.m {
                let b = self.basis[i];
                let below = self.lower[b] - self.x[b];
                let above = self.x[b] - self.upper[b];
                if below > worst {
                    worst = below;
                    r = i;
                    to_lower = true;
                }
                if above > worst {
                    worst = above;
                    r = i;
                    to_lower = false;
                }
            }
            if r == usize::MAX {
                return Outcome::Optimal;
            }
            let b = self.basis[r];
            let target = if to_lower { self.lower[b] } else { self.upper[b] };

            let mut q = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0f64;
            let row = self.row(r);
            for j in 0..self.ncols {
                if !self.enterable[j] || self.lower[j] == self.upper[j] {
                    continue;
                }
                let a = row[j];
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                // x_b moves by -a·Δx_j; need it to rise when below, fall when above
                let ok = match self.status[j] {
                    VarStatus::Basic => false,
                    VarStatus::AtLower => {
                        if to_lower { a < 0.0 } else { a > 0.0 }
                    }
                    VarStatus::AtUpper => {
                        if to_lower { a > 0.0 } else { a < 0.0 }
                    }
                    VarStatus::Free => true,
                };
                if !ok {
                    continue;
                }
                let ratio = self.d[j].abs() / a.abs();
                if ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && a.abs() > best_alpha.abs()) {
                    best_ratio = ratio;
                    best_alpha = a;
                    q = j;
                }
            }
            if q == usize::MAX {
                return Outcome::Infeasible;
            }
            let delta = (self.x[b] - target) / best_alpha;
            self.move_nonbasic(q, delta);
            self.x[b] = target;
            self.pivot(r, q);
            self.status[b] = if to_lower { VarStatus::AtLower } else { VarStatus::AtUpper };
        }
    }

    /// Two-phase primal simplex from a slack/artificial basis.
    pub(crate) fn cold(model: &MilpModel, lower: &[f64], upper: &[f64], iter_limit: usize) -> (Self, Outcome) {
        let mut tab = Self::with_slack_basis(model, lower, upper, true);
        tab.iter_limit = iter_limit;
        let n = tab.n;
        let m = tab.m;
        let na = tab.art_row.len();
        if na > 0 {
            let mut c1 = vec![0.0; tab.ncols];
            for k in 0..na {
                c1[n + m + k] = 1.0;
            }
            tab.price(&c1);
            match tab.primal() {
                Outcome::Optimal => {}
                Outcome::Unbounded => return (tab, Outcome::Infeasible),
                other => return (tab, other),
            }
            let infeas: f64 = (0..na).map(|k| tab.x[n + m + k]).sum();
            let scale = 1.0 + model.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            if infeas > FEAS_TOL * scale {
                return (tab, Outcome::Infeasible);
            }
            tab.retire_artificials();
        }
        let cost = tab.cost.clone();
        tab.price(&cost);
        let out = tab.primal();
        (tab, out)
    }

    fn retire_artificials(&mut self) {
        let first_art = self.n + self.m;
        for r in 0..self.m {
            if self.basis[r] < first_art {
                continue;
            }
            let mut q = usize::MAX;
            let mut best = 1e-7;
            for j in 0..first_art {
                if self.status[j] == VarStatus::Basic {
                    continue;
                }
                let a = self.at(r, j).abs();
                if a > best {
                    best = a;
                    q = j;
                }
            }
            if q != usize::MAX {
                let b = self.basis[r];
                // degenerate pivot: the artificial is (numerically) zero
                let delta = self.x[b] / self.at(r, q);
                self.move_nonbasic(q, delta);
                self.x[b] = 0.0;
                self.pivot(r, q);
                self.status[b] = VarStatus::AtLower;
            }
        }
        for j in first_art..self.ncols {
            self.enterable[j] = false;
            self.lower[j] = 0.0;
            self.upper[j] = 0.0;
            if self.status[j] != VarStatus::Basic {
                self.x[j] = 0.0;
            }
        }
    }

    pub(crate) fn snapshot(&self) -> BasisSnapshot {
        BasisSnapshot {
            basic: self.basis.clone(),
            at_upper: self.status.iter().map(|s| *s == VarStatus::AtUpper).collect(),
        }
    }

    /// Rebuilds a tableau with the given basis by Gauss-Jordan pivots from the
    /// slack basis. Returns `None` if the basis is (numerically) singular.
    pub(crate) fn from_snapshot(
        model: &MilpModel,
        lower: &[f64],
        upper: &[f64],
        snap: &BasisSnapshot,
        iter_limit: usize,
    ) -> Option<Self> {
        let mut tab = Self::with_slack_basis(model, lower, upper, false);
        tab.iter_limit = iter_limit;
        let n = tab.n;
        let m = tab.m;
        let nm = n + m;
        let want: Vec<usize> = snap.basic.iter().copied().filter(|&v| v < nm).collect();
        let mut is_wanted = vec![false; nm];
        for &v in &want {
            is_wanted[v] = true;
        }
        for &v in &want {
            if v >= n {
                continue;
            }
            let mut r = usize::MAX;
            let mut best = 1e-9;
            for i in 0..m {
                let b = tab.basis[i];
                if b >= n && !is_wanted[b] {
                    let a = tab.at(i, v).abs();
                    if a > best {
                        best = a;
                        r = i;
                    }
                }
            }
            if r == usize::MAX {
                return None;
            }
            tab.pivot(r, v);
        }
        // nonbasic placement
        for j in 0..nm {
            if tab.status[j] == VarStatus::Basic {
                continue;
            }
            let prefer_upper = snap.at_upper.get(j).copied().unwrap_or(false);
            let (lo, hi) = (tab.lower[j], tab.upper[j]);
            let (v, s) = if prefer_upper && hi.is_finite() {
                (hi, VarStatus::AtUpper)
            } else {
                resting_value(lo, hi)
            };
            tab.x[j] = v;
            tab.status[j] = s;
        }
        tab.recompute_basics(model);
        let cost = tab.cost.clone();
        tab.price(&cost);
        Some(tab)
    }

    /// x_B = B⁻¹ (b - N x_N), using the slack block of the tableau as B⁻¹.
    fn recompute_basics(&mut self, model: &MilpModel) {
        let n = self.n;
        let m = self.m;
        let mut rhs: Vec<f64> = model.rows.iter().map(|r| r.rhs).collect();
        for (i, r) in model.rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                if self.status[j] != VarStatus::Basic {
                    rhs[i] -= a * self.x[j];
                }
            }
            if self.status[n + i] != VarStatus::Basic {
                rhs[i] -= self.x[n + i];
            }
        }
        for (k, &i) in self.art_row.iter().enumerate() {
            let a = n + m + k;
            if self.status[a] != VarStatus::Basic {
                rhs[i] -= self.art_sign[k] * self.x[a];
            }
        }
        // artificial rows were sign-flipped: B⁻¹ still sits in the slack block
        for i in 0..m {
            let row = self.row(i);
            let v: f64 = (0..m).map(|k| row[n + k] * rhs[k]).sum();
            let b = self.basis[i];
            self.x[b] = v;
        }
    }

    /// Changes the bounds of column `j`, shifting a nonbasic value onto the
    /// new bound. The basis stays dual feasible.
    pub(crate) fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
        if self.status[j] == VarStatus::Basic {
            return;
        }
        let (v, s) = match self.status[j] {
            VarStatus::AtUpper if hi.is_finite() => (hi, VarStatus::AtUpper),
            _ => resting_value(lo, hi),
        };
        let delta = v - self.x[j];
        self.move_nonbasic(j, delta);
        self.x[j] = v;
        self.status[j] = s;
    }

    /// Re-solves the basic values against a fresh LU factorisation of the
    /// final basis, removing drift accumulated by tableau updates.
    pub(crate) fn refine(&mut self, model: &MilpModel) {
        let n = self.n;
        let m = self.m;
        if m == 0 {
            return;
        }
        let mut bmat = vec![0.0; m * m];
        let mut col_of: Vec<Option<usize>> = vec![None; self.ncols];
        for (pos, &b) in self.basis.iter().enumerate() {
            col_of[b] = Some(pos);
        }
        for (i, r) in model.rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                if let Some(pos) = col_of[j] {
                    bmat[i * m + pos] += a;
                }
            }
            if let Some(pos) = col_of[n + i] {
                bmat[i * m + pos] += 1.0;
            }
        }
        for (k, &i) in self.art_row.iter().enumerate() {
            if let Some(pos) = col_of[n + m + k] {
                bmat[i * m + pos] += self.art_sign[k];
            }
        }
        let mut rhs: Vec<f64> = model.rows.iter().map(|r| r.rhs).collect();
        for (i, r) in model.rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                if col_of[j].is_none() {
                    rhs[i] -= a * self.x[j];
                }
            }
            if col_of[n + i].is_none() {
                rhs[i] -= self.x[n + i];
            }
        }
        for (k, &i) in self.art_row.iter().enumerate() {
            if col_of[n + m + k].is_none() {
                rhs[i] -= self.art_sign[k] * self.x[n + m + k];
            }
        }
        if let Some(sol) = dense_solve(&mut bmat, &mut rhs, m) {
            for (pos, &b) in self.basis.iter().enumerate() {
                self.x[b] = sol[pos];
            }
        }
    }

    pub(crate) fn structural_values(&self) -> Vec<f64> {
        self.x[..self.n].to_vec()
    }

    pub(crate) fn objective(&self, model: &MilpModel) -> f64 {
        model.objective_value(&self.x[..self.n])
    }

    /// Row duals `y = c_B B⁻¹`, read off the slack reduced costs.
    pub(crate) fn duals(&self) -> Vec<f64> {
        (0..self.m).map(|i| -self.d[self.n + i]).collect()
    }
}

/// Gaussian elimination with partial pivoting; `a` is row-major `m × m`.
fn dense_solve(a: &mut [f64], b: &mut [f64], m: usize) -> Option<Vec<f64>> {
    for k in 0..m {
        let mut p = k;
        let mut best = a[k * m + k].abs();
        for i in k + 1..m {
            let v = a[i * m + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < 1e-14 {
            return None;
        }
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
            b.swap(k, p);
        }
        let piv = a[k * m + k];
        for i in k + 1..m {
            let f = a[i * m + k] / piv;
            if f != 0.0 {
                for c in k..m {
                    a[i * m + c] -= f * a[k * m + c];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let mut s = b[k];
        for c in k + 1..m {
            s -= a[k * m + c] * x[c];
        }
        x[k] = s / a[k * m + k];
    }
    Some(x)
}

pub(crate) fn solve_lp_with_bounds(
    model: &MilpModel,
    lower: &[f64],
    upper: &[f64],
    iter_limit: usize,
) -> (Option<Tableau>, Outcome, usize) {
    let (mut tab, out) = Tableau::cold(model, lower, upper, iter_limit);
    let iters = tab.iterations;
    match out {
        Outcome::Optimal => {
            tab.refine(model);
            (Some(tab), Outcome::Optimal, iters)
        }
        other => (None, other, iters),
    }
}

/// Solves the LP relaxation (integrality marks are ignored).
pub fn solve_lp(model: &MilpModel) -> MilpResult {
    if model.validate().is_err() {
        return MilpResult::without_solution(Status::Infeasible, 0);
    }
    let lower: Vec<f64> = model.columns.iter().map(|c| c.lower).collect();
    let upper: Vec<f64> = model.columns.iter().map(|c| c.upper).collect();
    let (tab, out, iters) = solve_lp_with_bounds(model, &lower, &upper, DEFAULT_ITER_LIMIT);
    match (tab, out) {
        (Some(tab), Outcome::Optimal) => MilpResult {
            status: Status::Optimal,
            objective: tab.objective(model),
            values: tab.structural_values(),
            node_count: 0,
            simplex_iterations: iters,
            gap: 0.0,
            duals: Some(tab.duals()),
        },
        (_, Outcome::Unbounded) => MilpResult::without_solution(Status::Unbounded, iters),
        (_, Outcome::IterLimit) => MilpResult::without_solution(Status::IterLimit, iters),
        _ => MilpResult::without_solution(Status::Infeasible, iters),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpsolve::Sense;

    #[test]
    fn single_variable_max() {
        // min -x s.t. x <= 5, x >= 0
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY, -1.0);
        m.add_row("cap", vec![(x, 1.0)], Sense::Le, 5.0);
        let r = solve_lp(&m);
        assert_eq!(r.status, Status::Optimal);
        assert!((r.values[0] - 5.0).abs() < 1e-12);
        assert!((r.objective + 5.0).abs() < 1e-12);
    }

    #[test]
    fn tight_covering_row() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY, 1.0);
        let y = m.add_continuous("y", 0.0, f64::INFINITY, 1.0);
        m.add_row("cover", vec![(x, 1.0), (y, 1.0)], Sense::Ge, 1.5);
        let r = solve_lp(&m);
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 1.5).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 1.0, 1.0);
        m.add_row("r", vec![(x, 1.0)], Sense::Ge, 2.0);
        assert_eq!(solve_lp(&m).status, Status::Infeasible);

        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY, -1.0);
        let y = m.add_continuous("y", 0.0, f64::INFINITY, 0.0);
        m.add_row("r", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        assert_eq!(solve_lp(&m).status, Status::Unbounded);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min x + 2y  s.t. x - y = -3, x >= -10 free-ish, y free; y <= 4
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", -10.0, f64::INFINITY, 1.0);
        let y = m.add_continuous("y", f64::NEG_INFINITY, 4.0, 2.0);
        m.add_row("eq", vec![(x, 1.0), (y, -1.0)], Sense::Eq, -3.0);
        let r = solve_lp(&m);
        assert_eq!(r.status, Status::Optimal);
        // y = x + 3, cost 3x + 6 minimised at x = -10
        assert!((r.values[0] + 10.0).abs() < 1e-9);
        assert!((r.values[1] + 7.0).abs() < 1e-9);
        assert!((r.objective + 24.0).abs() < 1e-9);
    }

    #[test]
    fn duals_certify_optimality() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 8.0, -3.0);
        let y = m.add_continuous("y", 0.0, f64::INFINITY, -2.0);
        m.add_row("a", vec![(x, 1.0), (y, 1.0)], Sense::Le, 10.0);
        m.add_row("b", vec![(x, 1.0), (y, 3.0)], Sense::Le, 18.0);
        m.add_row("c", vec![(x, 1.0), (y, -1.0)], Sense::Ge, -4.0);
        let r = solve_lp(&m);
        assert_eq!(r.status, Status::Optimal);
        let dual = m.dual_bound(r.duals.as_ref().unwrap(), 1e-9);
        assert!((dual - r.objective).abs() < 1e-7, "{dual} vs {}", r.objective);
    }

    #[test]
    fn warm_rebuild_matches_cold() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 8.0, -3.0);
        let y = m.add_continuous("y", 0.0, 6.0, -2.0);
        m.add_row("a", vec![(x, 1.0), (y, 1.0)], Sense::Le, 10.0);
        m.add_row("b", vec![(x, 2.0), (y, 1.0)], Sense::Ge, 3.0);
        let lo = vec![0.0, 0.0];
        let hi = vec![8.0, 6.0];
        let (tab, out) = Tableau::cold(&m, &lo, &hi, 1000);
        assert_eq!(out, Outcome::Optimal);
        let snap = tab.snapshot();
        let mut warm = Tableau::from_snapshot(&m, &lo, &hi, &snap, 1000).unwrap();
        assert_eq!(warm.dual(), Outcome::Optimal);
        assert!((warm.objective(&m) - tab.objective(&m)).abs() < 1e-12);
        // tighten x and re-optimise with the dual simplex
        warm.set_bounds(x, 0.0, 3.0);
        assert_eq!(warm.dual(), Outcome::Optimal);
        assert_eq!(warm.primal(), Outcome::Optimal);
        assert!((warm.objective(&m) - (-9.0 - 12.0)).abs() < 1e-9);
    }
}
