//! Probabilistic sequences on an equally spaced value grid.
//!
//! A [`ProbSeq`] stores `P{X = origin + i·step}` for `i = 0..len`. Sums and
//! differences of independent variables become discrete convolutions
//! ([`atc`], [`stc_full`], [`stc_truncated`]).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σ probs = 1`.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SotError {
    #[error("probability sequence is empty")]
    Empty,
    #[error("probability at index {0} is negative or not finite: {1}")]
    BadProbability(usize, f64),
    #[error("probabilities sum to {0}, expected 1")]
    BadMass(f64),
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("sequences have different steps: {0} vs {1}")]
    StepMismatch(f64, f64),
    #[error("support [{0}, {1}] is empty or not finite")]
    BadSupport(f64, f64),
    #[error("density has zero mass on the support")]
    ZeroMass,
    #[error("truncated subtraction needs both origins at 0, got {0} and {1}")]
    NonZeroOrigin(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbSeq {
    #[serde(rename = "origin_kw")]
    pub origin: f64,
    #[serde(rename = "step_kw")]
    pub step: f64,
    pub probs: Vec<f64>,
}

impl ProbSeq {
    pub fn new(origin: f64, step: f64, probs: Vec<f64>) -> Result<Self, SotError> {
        let s = Self { origin, step, probs };
        s.validate()?;
        Ok(s)
    }

    /// Point mass at `value`.
    pub fn delta(value: f64, step: f64) -> Self {
        Self { origin: value, step, probs: vec![1.0] }
    }

    pub fn validate(&self) -> Result<(), SotError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SotError::BadStep(self.step));
        }
        if self.probs.is_empty() {
            return Err(SotError::Empty);
        }
        if let Some((i, &p)) = self.probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
            return Err(SotError::BadProbability(i, p));
        }
        let mass: f64 = self.probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(SotError::BadMass(mass));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn max_value(&self) -> f64 {
        self.value(self.probs.len() - 1)
    }

    pub fn reversed(&self) -> Self {
        let mut probs = self.probs.clone();
        probs.reverse();
        Self { origin: self.origin, step: self.step, probs }
    }

    /// `P{X >= value(i)}` for every `i`.
    pub fn tail_masses(&self) -> Vec<f64> {
        let mut tail = vec![0.0; self.probs.len()];
        let mut acc = 0.0;
        for i in (0..self.probs.len()).rev() {
            acc += self.probs[i];
            tail[i] = acc;
        }
        tail
    }

    /// Sampler over grid indices.
    pub fn sampler(&self) -> IndexSampler {
        IndexSampler { dist: WeightedIndex::new(&self.probs).expect("validated sequence has positive mass") }
    }
}

/// Draws grid indices with the sequence's probabilities.
#[derive(Debug, Clone)]
pub struct IndexSampler {
    dist: WeightedIndex<f64>,
}

impl IndexSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

fn same_step(a: f64, b: f64) -> Result<(), SotError> {
    if (a - b).abs() <= 1e-12 * a.abs().max(b.abs()) {
        Ok(())
    } else {
        Err(SotError::StepMismatch(a, b))
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

/// Distribution of `A + B` for independent `A`, `B`.
pub fn atc(a: &ProbSeq, b: &ProbSeq) -> Result<ProbSeq, SotError> {
    same_step(a.step, b.step)?;
    Ok(ProbSeq { origin: a.origin + b.origin, step: a.step, probs: convolve(&a.probs, &b.probs) })
}

/// Distribution of `D - C` over the full signed support.
pub fn stc_full(d: &ProbSeq, c: &ProbSeq) -> Result<ProbSeq, SotError> {
    same_step(d.step, c.step)?;
    let rev = c.reversed();
    Ok(ProbSeq {
        origin: d.origin - c.max_value(),
        step: d.step,
        probs: convolve(&d.probs, &rev.probs),
    })
}

/// Index-space subtraction with every non-positive outcome folded into index 0.
pub fn stc_truncated(d: &ProbSeq, c: &ProbSeq) -> Result<ProbSeq, SotError> {
    same_step(d.step, c.step)?;
    if d.origin != 0.0 || c.origin != 0.0 {
        return Err(SotError::NonZeroOrigin(d.origin, c.origin));
    }
    let mut probs = vec![0.0; d.len().max(1)];
    for (id, &pd) in d.probs.iter().enumerate() {
        for (ic, &pc) in c.probs.iter().enumerate() {
            let k = id.saturating_sub(ic);
            probs[k] += pd * pc;
        }
    }
    while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
        probs.pop();
    }
    Ok(ProbSeq { origin: 0.0, step: d.step, probs })
}

pub fn expectation(s: &ProbSeq) -> f64 {
    s.probs.iter().enumerate().map(|(i, p)| s.value(i) * p).sum()
}

/// Largest grid index whose inclusive upper tail mass reaches `alpha`.
pub fn quantile_index(s: &ProbSeq, alpha: f64) -> usize {
    let tail = s.tail_masses();
    let mut idx = 0;
    for (i, &t) in tail.iter().enumerate() {
        if s.probs[i] > 0.0 && t >= alpha - 1e-12 {
            idx = i;
        }
    }
    idx
}

/// Smallest reserve `R` on the grid with `P{R >= E(σ) - σ} >= alpha`.
pub fn reserve_quantile(s: &ProbSeq, alpha: f64) -> f64 {
    expectation(s) - s.value(quantile_index(s, alpha))
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Discretises a density on `[lo, hi]` with half-width end cells.
pub fn discretize(pdf: &dyn Fn(f64) -> f64, lo: f64, hi: f64, q: f64) -> Result<ProbSeq, SotError> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(SotError::BadStep(q));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(SotError::BadSupport(lo, hi));
    }
    let n = ((hi - lo) / q + 1e-9).floor() as usize;
    if n == 0 {
        let mass = integrate(pdf, lo, hi, 1e-12);
        if !(mass > 0.0) {
            return Err(SotError::ZeroMass);
        }
        return Ok(ProbSeq::delta(0.5 * (lo + hi), q));
    }
    let half = 0.5 * q;
    let mut probs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let c = lo + i as f64 * q;
        let a = if i == 0 { lo } else { c - half };
        let b = if i == n { c } else { c + half };
        probs.push(integrate(pdf, a, b, 1e-13).max(0.0));
    }
    let mass: f64 = probs.iter().sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(SotError::ZeroMass);
    }
    probs.iter_mut().for_each(|p| *p /= mass);
    Ok(ProbSeq { origin: lo, step: q, probs })
}

/// Rounds `x` up to the next value of the form {1, 2, 5}·10^k.
pub fn round_125(x: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    let e = x.log10().floor();
    let base = 10f64.powf(e);
    for m in [1.0, 2.0, 5.0, 10.0] {
        let v = m * base;
        if v >= x * (1.0 - 1e-12) {
            return v;
        }
    }
    10.0 * base
}

/// Grid step that keeps the combined sequence at most `max_cells` steps wide.
pub fn default_step(total_width: f64, max_cells: usize) -> f64 {
    round_125(total_width / max_cells as f64)
}

/// Error sequence of the equivalent load `L - WT - PV`, plus the
/// intermediate renewable sum.
pub fn equivalent_load_sequence(load: &ProbSeq, wt: &ProbSeq, pv: &ProbSeq) -> Result<(ProbSeq, ProbSeq), SotError> {
    let joint = atc(wt, pv)?;
    let el = stc_full(load, &joint)?;
    Ok((joint, el))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn seq(origin: f64, step: f64, probs: &[f64]) -> ProbSeq {
        ProbSeq::new(origin, step, probs.to_vec()).unwrap()
    }

    /// Enumerates every joint outcome and buckets it by value.
    fn brute(a: &ProbSeq, b: &ProbSeq, sign: f64) -> BTreeMap<i64, f64> {
        let mut out = BTreeMap::new();
        for (i, pa) in a.probs.iter().enumerate() {
            for (j, pb) in b.probs.iter().enumerate() {
                let v = a.value(i) + sign * b.value(j);
                *out.entry((v / a.step).round() as i64).or_insert(0.0) += pa * pb;
            }
        }
        out
    }

    fn assert_matches(s: &ProbSeq, oracle: &BTreeMap<i64, f64>) {
        for (i, p) in s.probs.iter().enumerate() {
            let k = (s.value(i) / s.step).round() as i64;
            let want = oracle.get(&k).copied().unwrap_or(0.0);
            assert!((p - want).abs() <= 1e-12, "index {i}: {p} vs {want}");
        }
        let covered: f64 = s.probs.iter().sum();
        let total: f64 = oracle.values().sum();
        assert!((covered - total).abs() <= 1e-12);
    }

    #[test]
    fn uniform_discretises_to_half_cells() {
        let s = discretize(&|x| if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 }, 0.0, 1.0, 0.5).unwrap();
        assert_eq!(s.origin, 0.0);
        for (p, w) in s.probs.iter().zip([0.25, 0.5, 0.25]) {
            assert!((p - w).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_gaussian_lands_on_its_cell() {
        let sd: f64 = 0.01;
        let pdf = move |x: f64| (-(x - 1.0).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let s = discretize(&pdf, 0.0, 3.0, 1.0).unwrap();
        assert!(s.probs[1] > 1.0 - 1e-9);
    }

    #[test]
    fn symmetric_density_gives_palindrome() {
        let pdf = |x: f64| (-x * x / 2.0).exp();
        let s = discretize(&pdf, -3.0, 3.0, 0.25).unwrap();
        let n = s.len();
        for i in 0..n {
            assert!((s.probs[i] - s.probs[n - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn discretize_rejects_bad_input() {
        assert_eq!(discretize(&|_| 0.0, 0.0, 1.0, 0.1), Err(SotError::ZeroMass));
        assert!(matches!(discretize(&|_| 1.0, 1.0, 1.0, 0.1), Err(SotError::BadSupport(..))));
        assert!(matches!(discretize(&|_| 1.0, 0.0, 1.0, 0.0), Err(SotError::BadStep(_))));
    }

    #[test]
    fn atc_small_example() {
        let c = atc(&seq(0.0, 1.0, &[0.5, 0.5]), &seq(0.0, 1.0, &[0.2, 0.8])).unwrap();
        for (p, w) in c.probs.iter().zip([0.1, 0.5, 0.4]) {
            assert!((p - w).abs() < 1e-15);
        }
        let a = seq(2.0, 0.5, &[0.3, 0.7]);
        let shifted = atc(&a, &ProbSeq::delta(-1.5, 0.5)).unwrap();
        assert_eq!(shifted.probs, a.probs);
        assert_eq!(shifted.origin, 0.5);
    }

    #[test]
    fn stc_examples() {
        let d = seq(0.0, 1.0, &[0.5, 0.5]);
        let c = seq(0.0, 1.0, &[0.2, 0.8]);
        let e = stc_full(&d, &c).unwrap();
        assert_eq!(e.origin, -1.0);
        for (p, w) in e.probs.iter().zip([0.4, 0.5, 0.1]) {
            assert!((p - w).abs() < 1e-15);
        }
        let t = stc_truncated(&d, &c).unwrap();
        assert_eq!(t.probs.len(), 2);
        assert!((t.probs[0] - 0.9).abs() < 1e-15 && (t.probs[1] - 0.1).abs() < 1e-15);

        let zero = ProbSeq::delta(0.0, 1.0);
        assert_eq!(stc_full(&d, &zero).unwrap(), d);
        assert_eq!(stc_truncated(&d, &zero).unwrap(), d);
        assert!(matches!(stc_truncated(&seq(1.0, 1.0, &[1.0]), &zero), Err(SotError::NonZeroOrigin(..))));
        assert!(matches!(atc(&d, &seq(0.0, 2.0, &[1.0])), Err(SotError::StepMismatch(..))));
    }

    #[test]
    fn expectation_examples() {
        assert_eq!(expectation(&ProbSeq::delta(3.5, 1.0)), 3.5);
        assert!(expectation(&seq(-10.0, 10.0, &[0.1, 0.8, 0.1])).abs() < 1e-12);
        assert!((expectation(&seq(0.0, 0.5, &[0.25, 0.5, 0.25])) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reserve_quantile_examples() {
        let s = seq(-10.0, 10.0, &[0.1, 0.8, 0.1]);
        assert!(reserve_quantile(&s, 0.9).abs() < 1e-12);
        assert!((reserve_quantile(&s, 0.95) - 10.0).abs() < 1e-12);
        assert!((reserve_quantile(&s, 1e-9) - (expectation(&s) - 10.0)).abs() < 1e-12);
        assert!((reserve_quantile(&s, 1.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn step_rounding() {
        assert_eq!(round_125(0.13), 0.2);
        assert_eq!(round_125(0.2), 0.2);
        assert_eq!(round_125(3.0), 5.0);
        assert_eq!(round_125(7.0), 10.0);
        assert_eq!(default_step(100.0, 200), 0.5);
    }

    #[test]
    fn serialises_with_unit_suffixes() {
        let json = serde_json::to_string(&seq(-1.0, 0.5, &[0.5, 0.5])).unwrap();
        assert_eq!(json, r#"{"origin_kw":-1.0,"step_kw":0.5,"probs":[0.5,0.5]}"#);
    }

    fn arb_seq(max_len: usize) -> impl Strategy<Value = ProbSeq> {
        (prop::collection::vec(0.0f64..1.0, 1..=max_len), -20i32..20).prop_filter_map("positive mass", |(w, o)| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| ProbSeq { origin: o as f64 * 0.5, step: 0.5, probs: w.iter().map(|x| x / s).collect() })
        })
    }

    proptest! {
        #[test]
        fn atc_matches_enumeration(a in arb_seq(64), b in arb_seq(64)) {
            assert_matches(&atc(&a, &b).unwrap(), &brute(&a, &b, 1.0));
        }

        #[test]
        fn stc_matches_enumeration(d in arb_seq(64), c in arb_seq(64)) {
            assert_matches(&stc_full(&d, &c).unwrap(), &brute(&d, &c, -1.0));
        }

        #[test]
        fn atc_commutes_and_associates(a in arb_seq(16), b in arb_seq(16), c in arb_seq(16)) {
            let ab = atc(&a, &b).unwrap();
            let ba = atc(&b, &a).unwrap();
            prop_assert_eq!(ab.origin, ba.origin);
            for (x, y) in ab.probs.iter().zip(&ba.probs) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            let l = atc(&ab, &c).unwrap();
            let r = atc(&a, &atc(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(l.origin, r.origin);
            for (x, y) in l.probs.iter().zip(&r.probs) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn expectations_add_and_subtract(a in arb_seq(32), b in arb_seq(32)) {
            let s = atc(&a, &b).unwrap();
            prop_assert!((expectation(&s) - expectation(&a) - expectation(&b)).abs() <= 1e-9);
            let d = stc_full(&a, &b).unwrap();
            prop_assert!((expectation(&d) - expectation(&a) + expectation(&b)).abs() <= 1e-9);
            prop_assert!(((s.probs.iter().sum::<f64>()) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn truncated_stc_conserves_mass(d in arb_seq(32), c in arb_seq(32)) {
            let d = ProbSeq { origin: 0.0, ..d };
            let c = ProbSeq { origin: 0.0, ..c };
            let t = stc_truncated(&d, &c).unwrap();
            prop_assert!((t.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn reserve_monotone_in_alpha(s in arb_seq(40), a1 in 0.01f64..1.0, a2 in 0.01f64..1.0) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(reserve_quantile(&s, lo) <= reserve_quantile(&s, hi) + 1e-12);
        }
    }
}
