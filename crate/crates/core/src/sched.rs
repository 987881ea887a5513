//! Day-ahead unit commitment with a spinning-reserve chance constraint.
//!
//! The reserve requirement of each period is a chance constraint over the
//! discretised equivalent-load error. Two deterministic encodings are built:
//! [`Mode::BigM`] with one binary per error cell linked to the reserve by a
//! big-M sandwich, and [`Mode::QuantileReduced`], which replaces those
//! binaries by a single reserve row at the α-quantile. Both have the same
//! optimum.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpsolve::{solve_milp, MilpModel, MilpOptions, MilpResult, Sense, Status, FEAS_TOL};
use crate::par::{self, Exec};
use crate::sot::{expectation, reserve_quantile, ProbSeq, SotError};

/// Largest dense tableau (rows × columns) the built-in solver will attempt.
pub const MAX_TABLEAU_CELLS: usize = 25_000_000;

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("infeasible in period {period}: {reason}")]
    InfeasibleByConstruction { period: usize, reason: String },
    #[error("solver finished with status {0:?}")]
    Solver(Status),
    #[error("model has {rows} rows and {cols} columns, too large for the built-in dense solver; export it and use an external MILP solver")]
    TooLarge { rows: usize, cols: usize },
    #[error("recomputed cost {recomputed} differs from solver objective {reported}")]
    CostMismatch { reported: f64, recomputed: f64 },
    #[error("solution check failed: {0}")]
    Violation(String),
    #[error(transparent)]
    Sot(#[from] SotError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    BigM,
    #[default]
    QuantileReduced,
}

impl Mode {
    pub fn key(self) -> &'static str {
        match self {
            Mode::BigM => "bigm",
            Mode::QuantileReduced => "quantile",
        }
    }
}

/// One micro-turbine type and how many identical units of it exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtUnit {
    /// Fixed fuel cost while on ($/h).
    pub psi: f64,
    /// Marginal fuel cost ($/kWh).
    pub xi: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Startup cost ($).
    pub tau: f64,
    /// Spinning-reserve cost ($/kWh).
    pub varsigma_r: f64,
    pub count: usize,
}

impl MtUnit {
    /// Default fleet: two small units and one large unit.
    pub fn default_fleet() -> Vec<MtUnit> {
        vec![
            MtUnit { psi: 1.2, xi: 0.35, p_min: 5.0, p_max: 30.0, tau: 1.6, varsigma_r: 0.04, count: 2 },
            MtUnit { psi: 1.0, xi: 0.26, p_min: 10.0, p_max: 65.0, tau: 3.5, varsigma_r: 0.04, count: 1 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EssParams {
    pub p_ch_max: f64,
    pub p_dc_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub eta_ch: f64,
    pub eta_dc: f64,
    /// Energy at the start and end of the day (kWh).
    pub s_star: f64,
}

impl Default for EssParams {
    fn default() -> Self {
        Self { p_ch_max: 40.0, p_dc_max: 40.0, s_min: 32.0, s_max: 160.0, eta_ch: 0.9, eta_dc: 0.9, s_star: 96.0 }
    }
}

impl EssParams {
    /// A battery that can do nothing, for instances without storage.
    pub fn none() -> Self {
        Self { p_ch_max: 0.0, p_dc_max: 0.0, s_min: 0.0, s_max: 0.0, eta_ch: 1.0, eta_dc: 1.0, s_star: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleProblem {
    pub units: Vec<MtUnit>,
    pub ess: EssParams,
    /// Revised equivalent-load forecast per period (kW).
    pub el_revised: Vec<f64>,
    /// Controllable load per period (kW).
    pub cnload: Vec<f64>,
    /// Equivalent-load error distribution per period, `predicted - actual`.
    pub el_err_seq: Vec<ProbSeq>,
    pub alpha: f64,
    /// Subsidy paid per kWh of interrupted load.
    pub kappa: f64,
    /// Fraction of the equivalent load that may be interrupted.
    pub rho: f64,
    /// Big-M constant; `None` picks [`default_big_phi`].
    pub big_phi: Option<f64>,
    pub mode: Mode,
    /// Units running before the first period, per type.
    pub initial_on: Vec<usize>,
    /// Adds one binary per period forbidding simultaneous charge and discharge.
    pub charge_exclusion: bool,
}

impl ScheduleProblem {
    /// Problem with default fleet, battery and demand-response settings.
    pub fn new(el_revised: Vec<f64>, el_err_seq: Vec<ProbSeq>, alpha: f64) -> Self {
        let t = el_revised.len();
        let units = MtUnit::default_fleet();
        Self {
            initial_on: vec![0; units.len()],
            units,
            ess: EssParams::default(),
            el_revised,
            cnload: vec![0.0; t],
            el_err_seq,
            alpha,
            kappa: 0.1,
            rho: 0.1,
            big_phi: None,
            mode: Mode::QuantileReduced,
            charge_exclusion: false,
        }
    }

    pub fn periods(&self) -> usize {
        self.el_revised.len()
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let t = self.periods();
        let bad = |m: String| Err(SchedError::Invalid(m));
        if t == 0 {
            return bad("at least one period is required".into());
        }
        for (what, got) in [("cnload", self.cnload.len()), ("el_err_seq", self.el_err_seq.len())] {
            if got != t {
                return Err(SchedError::LengthMismatch { what, got, expected: t });
            }
        }
        if self.initial_on.len() != self.units.len() {
            return Err(SchedError::LengthMismatch { what: "initial_on", got: self.initial_on.len(), expected: self.units.len() });
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1]", self.rho));
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa {} must be non-negative", self.kappa));
        }
        if let Some(phi) = self.big_phi {
            if !(phi > 0.0 && phi.is_finite()) {
                return bad(format!("big_phi {phi} must be positive"));
            }
        }
        for (n, u) in self.units.iter().enumerate() {
            if !(0.0 <= u.p_min && u.p_min <= u.p_max) || u.psi < 0.0 || u.xi < 0.0 || u.tau < 0.0 || u.varsigma_r < 0.0 {
                return bad(format!("unit type {n} has inconsistent limits or negative costs"));
            }
            if self.initial_on[n] > u.count {
                return bad(format!("unit type {n}: {} initially on but only {} exist", self.initial_on[n], u.count));
            }
        }
        let e = &self.ess;
        if !(e.s_min <= e.s_star && e.s_star <= e.s_max) || e.p_ch_max < 0.0 || e.p_dc_max < 0.0 {
            return bad("battery needs s_min <= s_star <= s_max and non-negative power limits".into());
        }
        if !(e.eta_ch > 0.0 && e.eta_ch <= 1.0 && e.eta_dc > 0.0 && e.eta_dc <= 1.0) {
            return bad("battery efficiencies must lie in (0, 1]".into());
        }
        if self.el_revised.iter().chain(&self.cnload).any(|v| !v.is_finite()) {
            return bad("non-finite load".into());
        }
        for s in &self.el_err_seq {
            s.validate()?;
        }
        Ok(())
    }

    /// Reserve needed in each period to meet the chance constraint.
    pub fn reserve_requirements(&self) -> Vec<f64> {
        self.el_err_seq.iter().map(|s| reserve_quantile(s, self.alpha)).collect()
    }

    pub fn capacity(&self) -> f64 {
        self.units.iter().map(|u| u.p_max * u.count as f64).sum::<f64>() + self.ess.p_dc_max
    }

    pub fn big_phi(&self) -> f64 {
        self.big_phi.unwrap_or_else(|| default_big_phi(self))
    }

    /// Rejects instances no schedule can satisfy, before any solving.
    pub fn precheck(&self) -> Result<(), SchedError> {
        let cap = self.capacity();
        let reserve = self.reserve_requirements();
        for t in 0..self.periods() {
            let c = self.el_revised[t];
            let demand = c + self.cnload[t];
            let sheddable = self.rho * c.max(0.0);
            if demand - sheddable > cap + 1e-9 {
                return Err(SchedError::InfeasibleByConstruction {
                    period: t,
                    reason: format!("net demand {demand:.3} kW exceeds generation plus discharge capability {cap:.3} kW even after shedding {sheddable:.3} kW"),
                });
            }
            if demand < -self.ess.p_ch_max - 1e-9 {
                return Err(SchedError::InfeasibleByConstruction { period: t, reason: format!("surplus {:.3} kW exceeds charging capability {:.3} kW", -demand, self.ess.p_ch_max) });
            }
            if reserve[t] > cap + 1e-9 {
                return Err(SchedError::InfeasibleByConstruction { period: t, reason: format!("reserve requirement {:.3} kW exceeds capacity {cap:.3} kW", reserve[t]) });
            }
            if (demand - sheddable).max(0.0) + reserve[t].max(0.0) > cap + 1e-9 {
                return Err(SchedError::InfeasibleByConstruction {
                    period: t,
                    reason: format!("demand {demand:.3} kW plus reserve {:.3} kW exceeds capability {cap:.3} kW", reserve[t]),
                });
            }
        }
        Ok(())
    }
}

/// `10 · (fleet capacity + discharge limit + widest error support)`.
pub fn default_big_phi(p: &ScheduleProblem) -> f64 {
    let width = p.el_err_seq.iter().map(|s| s.max_value() - s.origin).fold(0.0, f64::max);
    10.0 * (p.capacity() + width).max(1.0)
}

/// `C(P_EL) = (L - E_L) - (WT - E_WT) - (PV - E_PV)` per period.
pub fn equivalent_load(load: &[f64], wt: &[f64], pv: &[f64], e_load: &[f64], e_wt: &[f64], e_pv: &[f64]) -> Result<Vec<f64>, SchedError> {
    let t = load.len();
    for (what, got) in [("wt forecast", wt.len()), ("pv forecast", pv.len()), ("load error", e_load.len()), ("wt error", e_wt.len()), ("pv error", e_pv.len())] {
        if got != t {
            return Err(SchedError::LengthMismatch { what, got, expected: t });
        }
    }
    Ok((0..t).map(|i| (load[i] - e_load[i]) - (wt[i] - e_wt[i]) - (pv[i] - e_pv[i])).collect())
}

/// Column indices of one unit in one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCols {
    pub on: usize,
    pub startup: usize,
    pub p: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodCols {
    /// Indexed `[type][copy]`.
    pub units: Vec<Vec<UnitCols>>,
    pub p_ch: usize,
    pub p_dc: usize,
    /// Energy at the end of the period.
    pub soc: usize,
    pub p_ress: usize,
    pub p_ie: usize,
    pub exclusion: Option<usize>,
    pub w: Vec<usize>,
}

/// A built model and where each scheduling quantity lives in it.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltModel {
    pub model: MilpModel,
    pub periods: Vec<PeriodCols>,
    pub mode: Mode,
}

fn build_common(p: &ScheduleProblem) -> Result<BuiltModel, SchedError> {
    p.validate()?;
    p.precheck()?;
    let mut m = MilpModel::new();
    let e = &p.ess;
    let mut periods = Vec::with_capacity(p.periods());
    for t in 0..p.periods() {
        let mut units = Vec::with_capacity(p.units.len());
        for (n, u) in p.units.iter().enumerate() {
            let copies = (0..u.count)
                .map(|k| UnitCols {
                    on: m.add_binary(format!("U_{n}_{k}_{t}"), u.psi),
                    startup: m.add_binary(format!("S_{n}_{k}_{t}"), u.tau),
                    p: m.add_continuous(format!("P_{n}_{k}_{t}"), 0.0, u.p_max, u.xi),
                    r: m.add_continuous(format!("R_{n}_{k}_{t}"), 0.0, u.p_max, u.varsigma_r),
                })
                .collect();
            units.push(copies);
        }
        let last = t + 1 == p.periods();
        let (soc_lo, soc_hi) = if last { (e.s_star, e.s_star) } else { (e.s_min, e.s_max) };
        let cols = PeriodCols {
            units,
            p_ch: m.add_continuous(format!("Pch_{t}"), 0.0, e.p_ch_max, 0.0),
            p_dc: m.add_continuous(format!("Pdc_{t}"), 0.0, e.p_dc_max, 0.0),
            soc: m.add_continuous(format!("Soc_{t}"), soc_lo, soc_hi, 0.0),
            p_ress: m.add_continuous(format!("Press_{t}"), 0.0, e.p_dc_max, 0.0),
            p_ie: m.add_continuous(format!("Pie_{t}"), 0.0, p.rho * p.el_revised[t].max(0.0), p.kappa),
            exclusion: p.charge_exclusion.then(|| m.add_binary(format!("X_{t}"), 0.0)),
            w: Vec::new(),
        };
        periods.push(cols);
    }

    for t in 0..p.periods() {
        let c = &periods[t];
        let all_units = || c.units.iter().flatten();
        let mut bal: Vec<(usize, f64)> = all_units().map(|u| (u.p, 1.0)).collect();
        bal.extend([(c.p_dc, 1.0), (c.p_ch, -1.0), (c.p_ie, 1.0)]);
        m.add_row(format!("balance_{t}"), bal, Sense::Eq, p.el_revised[t] + p.cnload[t]);

        for (n, u) in p.units.iter().enumerate() {
            for (k, uc) in c.units[n].iter().enumerate() {
                m.add_row(format!("pmin_{n}_{k}_{t}"), vec![(uc.p, 1.0), (uc.on, -u.p_min)], Sense::Ge, 0.0);
                m.add_row(format!("pmax_{n}_{k}_{t}"), vec![(uc.p, 1.0), (uc.on, -u.p_max)], Sense::Le, 0.0);
                m.add_row(format!("headroom_{n}_{k}_{t}"), vec![(uc.p, 1.0), (uc.r, 1.0), (uc.on, -u.p_max)], Sense::Le, 0.0);
                if t == 0 {
                    let was_on = if k < p.initial_on[n] { 1.0 } else { 0.0 };
                    m.add_row(format!("startup_{n}_{k}_{t}"), vec![(uc.startup, 1.0), (uc.on, -1.0)], Sense::Ge, -was_on);
                } else {
                    let prev = periods[t - 1].units[n][k].on;
                    m.add_row(format!("startup_{n}_{k}_{t}"), vec![(uc.startup, 1.0), (uc.on, -1.0), (prev, 1.0)], Sense::Ge, 0.0);
                }
                if k + 1 < u.count {
                    m.add_row(format!("order_{n}_{k}_{t}"), vec![(uc.on, 1.0), (c.units[n][k + 1].on, -1.0)], Sense::Ge, 0.0);
                }
            }
        }

        // S_t - S_{t-1} - eta_ch Pch + Pdc / eta_dc = 0, with S_{-1} = s_star
        let mut soc = vec![(c.soc, 1.0), (c.p_ch, -e.eta_ch), (c.p_dc, 1.0 / e.eta_dc)];
        let rhs = if t == 0 {
            e.s_star
        } else {
            soc.push((periods[t - 1].soc, -1.0));
            0.0
        };
        m.add_row(format!("soc_{t}"), soc, Sense::Eq, rhs);
        m.add_row(format!("ress_energy_{t}"), vec![(c.p_ress, 1.0), (c.soc, -e.eta_dc)], Sense::Le, -e.eta_dc * e.s_min);
        m.add_row(format!("ress_power_{t}"), vec![(c.p_ress, 1.0), (c.p_dc, 1.0)], Sense::Le, e.p_dc_max);
        if let Some(x) = c.exclusion {
            m.add_row(format!("excl_ch_{t}"), vec![(c.p_ch, 1.0), (x, -e.p_ch_max)], Sense::Le, 0.0);
            m.add_row(format!("excl_dc_{t}"), vec![(c.p_dc, 1.0), (x, e.p_dc_max)], Sense::Le, e.p_dc_max);
        }
    }
    Ok(BuiltModel { model: m, periods, mode: p.mode })
}

fn reserve_terms(c: &PeriodCols) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = c.units.iter().flatten().map(|u| (u.r, 1.0)).collect();
    v.push((c.p_ress, 1.0));
    v
}

/// Chance constraint through one binary per error cell.
///
/// Cell `i` is covered (`W = 1`) exactly when the reserve reaches
/// `E(σ) - value(i)`. Both sandwich rows are multiplied through by Φ so
/// their residuals are in kW.
pub fn build_bigm_model(p: &ScheduleProblem) -> Result<BuiltModel, SchedError> {
    let mut b = build_common(p)?;
    let phi = p.big_phi();
    for t in 0..p.periods() {
        let s = &p.el_err_seq[t];
        let e = expectation(s);
        let terms = reserve_terms(&b.periods[t]);
        let mut chance = Vec::with_capacity(s.len());
        let mut w = Vec::with_capacity(s.len());
        for i in 0..s.len() {
            let wi = b.model.add_binary(format!("W_{i}_{t}"), 0.0);
            w.push(wi);
            chance.push((wi, s.probs[i]));
            let threshold = e - s.value(i);
            let mut lo = terms.clone();
            lo.push((wi, -phi));
            // (R + v_i - E) / Φ <= W
            b.model.add_row(format!("wlo_{i}_{t}"), lo.clone(), Sense::Le, threshold);
            // W <= 1 + (R + v_i - E) / Φ
            b.model.add_row(format!("whi_{i}_{t}"), lo, Sense::Ge, threshold - phi);
        }
        b.model.add_row(format!("chance_{t}"), chance, Sense::Ge, p.alpha - 1e-12);
        b.periods[t].w = w;
    }
    b.mode = Mode::BigM;
    Ok(b)
}

/// Chance constraint as one reserve row per period at the α-quantile.
pub fn build_quantile_model(p: &ScheduleProblem) -> Result<BuiltModel, SchedError> {
    let mut b = build_common(p)?;
    for (t, r) in p.reserve_requirements().into_iter().enumerate() {
        let terms = reserve_terms(&b.periods[t]);
        b.model.add_row(format!("reserve_{t}"), terms, Sense::Ge, r);
    }
    b.mode = Mode::QuantileReduced;
    Ok(b)
}

pub fn build_model(p: &ScheduleProblem) -> Result<BuiltModel, SchedError> {
    match p.mode {
        Mode::BigM => build_bigm_model(p),
        Mode::QuantileReduced => build_quantile_model(p),
    }
}

/// `[lower, upper]` the big-M sandwich leaves for one `W`.
pub fn sandwich_bounds(reserve: f64, expected_error: f64, grid_value: f64, phi: f64) -> (f64, f64) {
    let slack = (reserve + grid_value - expected_error) / phi;
    (slack, 1.0 + slack)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDispatch {
    pub unit_type: usize,
    pub copy: usize,
    pub on: bool,
    pub startup: bool,
    pub p_kw: f64,
    pub reserve_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDispatch {
    pub units: Vec<UnitDispatch>,
    pub p_ch_kw: f64,
    pub p_dc_kw: f64,
    /// Stored energy at the end of the period (kWh).
    pub soc_kwh: f64,
    pub p_ress_kw: f64,
    pub p_ie_kw: f64,
    pub reserve_required_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub fuel: f64,
    pub startup: f64,
    pub reserve: f64,
    pub subsidy: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.fuel + self.startup + self.reserve + self.subsidy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSolution {
    pub periods: Vec<PeriodDispatch>,
    pub soc_initial_kwh: f64,
    pub costs: CostBreakdown,
    pub total_cost: f64,
}

/// Dispatch cost recomputed from the schedule alone.
pub fn cost_of(p: &ScheduleProblem, periods: &[PeriodDispatch]) -> CostBreakdown {
    let mut c = CostBreakdown::default();
    for pd in periods {
        for u in &pd.units {
            let spec = &p.units[u.unit_type];
            if u.on {
                c.fuel += spec.psi + spec.xi * u.p_kw;
            } else {
                c.fuel += spec.xi * u.p_kw;
            }
            if u.startup {
                c.startup += spec.tau;
            }
            c.reserve += spec.varsigma_r * u.reserve_kw;
        }
        c.subsidy += p.kappa * pd.p_ie_kw;
    }
    c
}

/// Maps solver values back to a schedule and checks the cost bookkeeping.
pub fn extract_solution(p: &ScheduleProblem, built: &BuiltModel, values: &[f64], objective: f64) -> Result<ScheduleSolution, SchedError> {
    if values.len() != built.model.num_columns() {
        return Err(SchedError::LengthMismatch { what: "solution values", got: values.len(), expected: built.model.num_columns() });
    }
    let bound_viol = built
        .model
        .columns
        .iter()
        .zip(values)
        .map(|(c, &v)| (c.lower - v).max(v - c.upper).max(0.0))
        .fold(0.0, f64::max);
    if bound_viol > 1e-6 {
        return Err(SchedError::Violation(format!("a column violates its bounds by {bound_viol:e}")));
    }
    let reserve = p.reserve_requirements();
    let flag = |j: usize| values[j] > 0.5;
    let periods: Vec<PeriodDispatch> = built
        .periods
        .iter()
        .enumerate()
        .map(|(t, c)| PeriodDispatch {
            units: c
                .units
                .iter()
                .enumerate()
                .flat_map(|(n, copies)| {
                    copies.iter().enumerate().map(move |(k, u)| UnitDispatch { unit_type: n, copy: k, on: flag(u.on), startup: flag(u.startup), p_kw: values[u.p], reserve_kw: values[u.r] })
                })
                .collect(),
            p_ch_kw: values[c.p_ch],
            p_dc_kw: values[c.p_dc],
            soc_kwh: values[c.soc],
            p_ress_kw: values[c.p_ress],
            p_ie_kw: values[c.p_ie],
            reserve_required_kw: reserve[t],
        })
        .collect();
    let costs = cost_of(p, &periods);
    let total = costs.total();
    if (total - objective).abs() > 1e-6 * objective.abs().max(1.0) {
        return Err(SchedError::CostMismatch { reported: objective, recomputed: total });
    }
    Ok(ScheduleSolution { periods, soc_initial_kwh: p.ess.s_star, costs, total_cost: total })
}

/// Measured residuals of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub max_balance_residual_kw: f64,
    pub max_soc_replay_error_kwh: f64,
    pub terminal_soc_error_kwh: f64,
    pub max_bound_violation: f64,
    pub min_reserve_margin_kw: f64,
}

pub const BALANCE_TOL: f64 = 1e-6;
pub const SOC_TOL: f64 = 1e-9;

/// Re-checks a schedule against the problem without using the model.
pub fn validate_solution(p: &ScheduleProblem, s: &ScheduleSolution) -> Result<Validation, SchedError> {
    if s.periods.len() != p.periods() {
        return Err(SchedError::LengthMismatch { what: "schedule periods", got: s.periods.len(), expected: p.periods() });
    }
    let e = &p.ess;
    let mut v = Validation { max_balance_residual_kw: 0.0, max_soc_replay_error_kwh: 0.0, terminal_soc_error_kwh: 0.0, max_bound_violation: 0.0, min_reserve_margin_kw: f64::INFINITY };
    let mut soc = s.soc_initial_kwh;
    let over = |x: f64, lo: f64, hi: f64| (lo - x).max(x - hi).max(0.0);
    for (t, pd) in s.periods.iter().enumerate() {
        let gen: f64 = pd.units.iter().map(|u| u.p_kw).sum();
        let residual = gen + pd.p_dc_kw - pd.p_ch_kw + pd.p_ie_kw - (p.el_revised[t] + p.cnload[t]);
        v.max_balance_residual_kw = v.max_balance_residual_kw.max(residual.abs());
        soc = soc + e.eta_ch * pd.p_ch_kw - pd.p_dc_kw / e.eta_dc;
        v.max_soc_replay_error_kwh = v.max_soc_replay_error_kwh.max((soc - pd.soc_kwh).abs());
        let mut b = over(pd.p_ch_kw, 0.0, e.p_ch_max).max(over(pd.p_dc_kw, 0.0, e.p_dc_max)).max(over(pd.soc_kwh, e.s_min, e.s_max));
        b = b.max(over(pd.p_ie_kw, 0.0, p.rho * p.el_revised[t].max(0.0)));
        b = b.max(over(pd.p_ress_kw, 0.0, (e.eta_dc * (pd.soc_kwh - e.s_min)).min(e.p_dc_max - pd.p_dc_kw).max(0.0)));
        for u in &pd.units {
            let spec = &p.units[u.unit_type];
            let (lo, hi) = if u.on { (spec.p_min, spec.p_max) } else { (0.0, 0.0) };
            b = b.max(over(u.p_kw, lo, hi)).max(over(u.reserve_kw, 0.0, hi - u.p_kw));
        }
        v.max_bound_violation = v.max_bound_violation.max(b);
        let provided: f64 = pd.units.iter().map(|u| u.reserve_kw).sum::<f64>() + pd.p_ress_kw;
        v.min_reserve_margin_kw = v.min_reserve_margin_kw.min(provided - pd.reserve_required_kw);
    }
    v.terminal_soc_error_kwh = (soc - e.s_star).abs().max((s.periods.last().unwrap().soc_kwh - e.s_star).abs());
    if v.max_balance_residual_kw > BALANCE_TOL {
        return Err(SchedError::Violation(format!("power balance off by {:e} kW", v.max_balance_residual_kw)));
    }
    if v.max_soc_replay_error_kwh > SOC_TOL || v.terminal_soc_error_kwh > SOC_TOL {
        return Err(SchedError::Violation(format!("stored energy replay off by {:e} kWh (terminal {:e})", v.max_soc_replay_error_kwh, v.terminal_soc_error_kwh)));
    }
    if (s.soc_initial_kwh - e.s_star).abs() > SOC_TOL {
        return Err(SchedError::Violation("initial stored energy differs from s_star".into()));
    }
    if v.max_bound_violation > 1e-6 {
        return Err(SchedError::Violation(format!("a bound is violated by {:e}", v.max_bound_violation)));
    }
    if v.min_reserve_margin_kw < -1e-6 {
        return Err(SchedError::Violation(format!("reserve short by {:e} kW", -v.min_reserve_margin_kw)));
    }
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: ScheduleSolution,
    pub milp: MilpResult,
    pub built: BuiltModel,
}

/// Builds, solves, extracts and validates.
pub fn solve(p: &ScheduleProblem, opts: &MilpOptions) -> Result<SolveOutcome, SchedError> {
    let built = build_model(p)?;
    let (rows, cols) = (built.model.num_rows(), built.model.num_columns());
    if rows * (cols + rows) > MAX_TABLEAU_CELLS {
        return Err(SchedError::TooLarge { rows, cols });
    }
    let milp = solve_milp(&built.model, opts);
    if !milp.has_solution() {
        return Err(SchedError::Solver(milp.status));
    }
    if milp.status != Status::Optimal {
        log::warn!("schedule solve stopped at {:?} with gap {:.3e}", milp.status, milp.gap);
    }
    debug_assert!(built.model.max_violation(&milp.values) <= FEAS_TOL * 10.0);
    let solution = extract_solution(p, &built, &milp.values, milp.objective)?;
    validate_solution(p, &solution)?;
    Ok(SolveOutcome { solution, milp, built })
}

/// Per-period share of sampled errors covered by the scheduled reserve.
pub fn coverage(p: &ScheduleProblem, s: &ScheduleSolution, draws: usize, seed: u64, exec: Exec) -> Vec<f64> {
    par::map_range(exec, p.periods(), |t| {
        let seq = &p.el_err_seq[t];
        let e = expectation(seq);
        let pd = &s.periods[t];
        let provided: f64 = pd.units.iter().map(|u| u.reserve_kw).sum::<f64>() + pd.p_ress_kw;
        let sampler = seq.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let hits = (0..draws).filter(|_| provided + 1e-9 >= e - seq.value(sampler.sample(&mut rng))).count();
        hits as f64 / draws as f64
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SchedError + '_ {
    move |source| SchedError::Io { path: path.display().to_string(), source }
}

/// One row per period and quantity, one column per period-level field and unit.
pub fn write_dispatch_csv(s: &ScheduleSolution, path: &Path) -> Result<(), SchedError> {
    let mut out = String::from("period");
    if let Some(first) = s.periods.first() {
        for u in &first.units {
            out.push_str(&format!(",on_{0}_{1},p_{0}_{1}_kw,r_{0}_{1}_kw", u.unit_type, u.copy));
        }
    }
    out.push_str(",p_ch_kw,p_dc_kw,soc_kwh,p_ress_kw,p_ie_kw,reserve_required_kw\n");
    for (t, pd) in s.periods.iter().enumerate() {
        out.push_str(&t.to_string());
        for u in &pd.units {
            out.push_str(&format!(",{},{},{}", u8::from(u.on), u.p_kw, u.reserve_kw));
        }
        out.push_str(&format!(",{},{},{},{},{},{}\n", pd.p_ch_kw, pd.p_dc_kw, pd.soc_kwh, pd.p_ress_kw, pd.p_ie_kw, pd.reserve_required_kw));
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpsolve::solve_lp;

    fn exact() -> MilpOptions {
        MilpOptions { gap_tol: 0.0, abs_gap: 1e-9, ..MilpOptions::default() }
    }

    fn one_unit(el: f64) -> ScheduleProblem {
        let mut p = ScheduleProblem::new(vec![el], vec![ProbSeq::delta(0.0, 1.0)], 0.95);
        p.units = vec![MtUnit { psi: 1.2, xi: 0.35, p_min: 5.0, p_max: 30.0, tau: 1.6, varsigma_r: 0.04, count: 1 }];
        p.initial_on = vec![0];
        p.ess = EssParams::none();
        p.rho = 0.0;
        p
    }

    #[test]
    fn equivalent_load_examples() {
        assert_eq!(equivalent_load(&[100.0], &[30.0], &[20.0], &[0.0], &[0.0], &[0.0]).unwrap(), vec![50.0]);
        assert_eq!(equivalent_load(&[100.0], &[30.0], &[20.0], &[2.0], &[-3.0], &[1.0]).unwrap(), vec![46.0]);
        assert_eq!(equivalent_load(&[0.0; 3], &[0.0; 3], &[0.0; 3], &[0.0; 3], &[0.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(matches!(equivalent_load(&[1.0], &[], &[1.0], &[0.0], &[0.0], &[0.0]), Err(SchedError::LengthMismatch { .. })));
    }

    #[test]
    fn sandwich_example() {
        let (lo, hi) = sandwich_bounds(10.0, 0.0, -5.0, 1e6);
        assert!((lo - 5e-6).abs() < 1e-18);
        assert!((hi - (1.0 + 5e-6)).abs() < 1e-15);
    }

    #[test]
    fn single_unit_cost_matches_enumeration() {
        let p = one_unit(20.0);
        for mode in [Mode::BigM, Mode::QuantileReduced] {
            let out = solve(&ScheduleProblem { mode, ..p.clone() }, &exact()).unwrap();
            let u = &out.solution.periods[0].units[0];
            assert!(u.on && u.startup);
            assert!((u.p_kw - 20.0).abs() < 1e-9);
            assert!((out.solution.total_cost - 9.8).abs() < 1e-9);
        }
        // enumerate U (S follows as the cheapest value the startup row allows)
        let b = build_quantile_model(&p).unwrap();
        let cols = b.periods[0].units[0][0];
        let mut best = f64::INFINITY;
        for u in [0.0, 1.0] {
            let mut m = b.model.clone();
            for j in [cols.on, cols.startup] {
                m.columns[j].lower = u;
                m.columns[j].upper = u;
            }
            let r = solve_lp(&m);
            if r.status == Status::Optimal {
                best = best.min(r.objective);
            }
        }
        assert!((best - 9.8).abs() < 1e-9);
    }

    #[test]
    fn null_instance_costs_nothing() {
        let p = one_unit(0.0);
        let out = solve(&p, &exact()).unwrap();
        assert_eq!(out.solution.total_cost, 0.0);
        assert!(!out.solution.periods[0].units[0].on);
    }

    #[test]
    fn degenerate_chance_constraint_forces_w() {
        let mut p = one_unit(20.0);
        p.mode = Mode::BigM;
        let b = build_bigm_model(&p).unwrap();
        assert_eq!(b.periods[0].w.len(), 1);
        let out = solve(&p, &exact()).unwrap();
        assert_eq!(out.milp.values[b.periods[0].w[0]], 1.0);
        assert!(out.solution.periods[0].units[0].reserve_kw.abs() < 1e-9);
    }

    #[test]
    fn binary_counts() {
        let seq = ProbSeq::new(-100.0, 1.0, vec![1.0 / 201.0; 201]).unwrap();
        let mut p = ScheduleProblem::new(vec![60.0; 24], vec![seq; 24], 0.9);
        p.mode = Mode::BigM;
        assert_eq!(build_bigm_model(&p).unwrap().model.binary_count(), 24 * (2 * 3 + 201));
        assert_eq!(build_quantile_model(&p).unwrap().model.binary_count(), 24 * 2 * 3);
        let q = build_quantile_model(&p).unwrap();
        assert!(q.model.columns.iter().all(|c| !c.name.starts_with('W')));
    }

    #[test]
    fn loosest_quantile_uses_the_largest_error() {
        let seq = ProbSeq::new(-2.0, 1.0, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let e = expectation(&seq);
        let p = ScheduleProblem::new(vec![40.0], vec![seq.clone()], 0.4);
        assert!((p.reserve_requirements()[0] - (e - seq.max_value())).abs() < 1e-12);
    }

    #[test]
    fn precheck_rejects_impossible_demand() {
        let p = one_unit(31.0);
        assert!(matches!(build_quantile_model(&p), Err(SchedError::InfeasibleByConstruction { period: 0, .. })));
    }

    #[test]
    fn validation_catches_soc_errors() {
        let seq = ProbSeq::new(-2.0, 1.0, vec![0.25; 4]).unwrap();
        let p = ScheduleProblem::new(vec![50.0, 80.0, 30.0], vec![seq; 3], 0.9);
        let out = solve(&p, &exact()).unwrap();
        let mut bad = out.solution.clone();
        bad.periods[1].soc_kwh += 1e-3;
        assert!(matches!(validate_solution(&p, &bad), Err(SchedError::Violation(_))));
        let mut low = out.solution.clone();
        low.periods[0].soc_kwh = p.ess.s_min - 1.0;
        assert!(validate_solution(&p, &low).is_err());
    }

    #[test]
    fn relaxation_is_a_lower_bound() {
        let seq = ProbSeq::new(-3.0, 1.0, vec![0.1, 0.2, 0.4, 0.2, 0.1]).unwrap();
        let p = ScheduleProblem::new(vec![50.0, 90.0, 30.0, 70.0], vec![seq; 4], 0.95);
        let b = build_quantile_model(&p).unwrap();
        let lp = solve_lp(&b.model);
        let out = solve(&p, &exact()).unwrap();
        assert!(lp.objective <= out.solution.total_cost + 1e-9);
    }

    #[test]
    fn coverage_meets_alpha() {
        let seq = ProbSeq::new(-4.0, 1.0, vec![0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.05]).unwrap();
        let p = ScheduleProblem::new(vec![40.0, 60.0], vec![seq; 2], 0.9);
        let out = solve(&p, &exact()).unwrap();
        for c in coverage(&p, &out.solution, 10_000, 1, Exec::Sequential) {
            assert!(c >= 0.88, "{c}");
        }
    }

    #[test]
    fn dispatch_csv_has_one_line_per_period() {
        let seq = ProbSeq::delta(0.0, 1.0);
        let p = ScheduleProblem::new(vec![40.0, 60.0], vec![seq; 2], 0.9);
        let out = solve(&p, &exact()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dispatch_csv(&out.solution, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("period,on_0_0,"));
    }
}
