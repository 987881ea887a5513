//! Forecast residual modelling with the t location-scale (TLS) family.
//!
//! Residuals are `predicted - actual`, so a revised forecast is
//! `predicted - E(residual)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::data::Source;

/// Shape values above this are treated as normal.
pub const MAX_SHAPE: f64 = 1e6;
/// Minimum residual count for a TLS fit.
pub const MIN_FIT_SAMPLES: usize = 30;
/// Residual count at which a cell gets its own hourly fit.
pub const HOURLY_FIT_SAMPLES: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum ErrModelError {
    #[error("invalid TLS parameters: mu {mu}, epsilon {epsilon}, vartheta {vartheta}")]
    InvalidParams { mu: f64, epsilon: f64, vartheta: f64 },
    #[error("need at least {MIN_FIT_SAMPLES} residuals to fit, got {0}")]
    TooFewSamples(usize),
    #[error("residuals contain a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("residuals have no spread; the scale underflows")]
    ScaleUnderflow,
    #[error("actual and predicted lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no data to evaluate")]
    Empty,
    #[error("MAPE undefined: every actual value is zero")]
    AllZeroActuals,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsParams {
    pub mu: f64,
    pub epsilon: f64,
    pub vartheta: f64,
}

impl TlsParams {
    pub fn new(mu: f64, epsilon: f64, vartheta: f64) -> Result<Self, ErrModelError> {
        let p = Self { mu, epsilon, vartheta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ErrModelError> {
        if self.mu.is_finite() && self.epsilon > 0.0 && self.epsilon.is_finite() && self.vartheta > 0.0 && !self.vartheta.is_nan() {
            Ok(())
        } else {
            Err(ErrModelError::InvalidParams { mu: self.mu, epsilon: self.epsilon, vartheta: self.vartheta })
        }
    }

    fn log_norm(&self) -> f64 {
        let v = self.vartheta;
        ln_gamma((v + 1.0) / 2.0) - ln_gamma(v / 2.0) - self.epsilon.ln() - 0.5 * (v * std::f64::consts::PI).ln()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.epsilon;
        self.log_norm() - 0.5 * (self.vartheta + 1.0) * (z * z / self.vartheta).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        let c = self.log_norm();
        let k = 0.5 * (self.vartheta + 1.0);
        let inv = 1.0 / (self.epsilon * self.epsilon * self.vartheta);
        xs.iter().map(|&x| c - k * ((x - self.mu) * (x - self.mu) * inv).ln_1p()).sum()
    }
}

/// Density of the TLS distribution at `x`.
pub fn tls_pdf(p: &TlsParams, x: f64) -> Result<f64, ErrModelError> {
    p.validate()?;
    Ok(p.pdf(x))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TlsFit {
    pub params: TlsParams,
    pub log_likelihood: f64,
    pub evaluations: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) }
}

fn check_finite(xs: &[f64]) -> Result<(), ErrModelError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(ErrModelError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Nelder-Mead minimisation. Returns the best point, its value and the
/// number of function evaluations.
///
/// Stops when the simplex diameter drops below `xtol`, the value spread drops
/// below `ftol` relative to the best value, or the budget runs out.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    steps: &[f64],
    xtol: f64,
    ftol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, usize) {
    let n = start.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), eval(start)));
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diam = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diam <= xtol || (worst - best).abs() <= ftol * best.abs() || evals.get() >= max_evals {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let towards = |t: f64, x: &[f64]| -> Vec<f64> { centroid.iter().zip(x).map(|(c, w)| c + t * (w - c)).collect() };
        let xr = towards(-alpha, &simplex[n].0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = towards(-gamma, &simplex[n].0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = towards(-rho, &simplex[n].0);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = towards(rho, &simplex[n].0);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x0.iter().zip(&item.0).map(|(a, b)| a + sigma * (b - a)).collect();
                    let v = eval(&x);
                    *item = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals.get())
}

/// Fits whose scale falls below this fraction of the robust initial scale are
/// treated as collapsed onto tied residuals.
pub const COLLAPSE_RATIO: f64 = 1e-3;

/// Maximum-likelihood TLS fit by simplex search over `(mu, ln eps, ln vartheta)`.
pub fn fit_tls(residuals: &[f64]) -> Result<TlsFit, ErrModelError> {
    if residuals.len() < MIN_FIT_SAMPLES {
        return Err(ErrModelError::TooFewSamples(residuals.len()));
    }
    check_finite(residuals)?;
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mut scale = 1.4826 * median(&dev);
    if !(scale > 0.0) {
        // more than half the residuals coincide; fall back to the spread
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        scale = (residuals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / residuals.len() as f64).sqrt();
    }
    if !(scale > f64::MIN_POSITIVE * 1e10) {
        return Err(ErrModelError::ScaleUnderflow);
    }

    let max_ln_shape = MAX_SHAPE.ln();
    let objective = |th: &[f64]| {
        let p = TlsParams { mu: th[0], epsilon: th[1].exp(), vartheta: th[2].min(max_ln_shape).exp() };
        if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
            return f64::INFINITY;
        }
        -p.log_likelihood(residuals)
    };
    let init = [med, scale.ln(), 5f64.ln()];
    let init_value = objective(&init);
    let (mut best, mut value, mut evals) = nelder_mead(&objective, &init, &[0.25 * scale, 0.3, 0.5], 1e-10 * (1.0 + scale), 1e-15, 4000);
    // restart once from the optimum to escape a collapsed simplex
    let (again, v2, e2) = nelder_mead(&objective, &best, &[0.05 * scale, 0.05, 0.1], 1e-10 * (1.0 + scale), 1e-15, 2000);
    evals += e2;
    if v2 <= value {
        best = again;
        value = v2;
    }
    if value > init_value {
        best = init.to_vec();
        value = init_value;
    }
    let params = TlsParams { mu: best[0], epsilon: best[1].exp(), vartheta: best[2].min(max_ln_shape).exp() };
    params.validate().map_err(|_| ErrModelError::ScaleUnderflow)?;
    if params.epsilon < COLLAPSE_RATIO * scale {
        // tied residuals make the likelihood unbounded as eps shrinks
        return Err(ErrModelError::ScaleUnderflow);
    }
    Ok(TlsFit { params, log_likelihood: -value, evaluations: evals })
}

/// Log-likelihood of the maximum-likelihood normal fit.
pub fn normal_log_likelihood(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorExpectation {
    pub value: f64,
    /// Set when the shape leaves the mean undefined and the sample mean is used.
    pub fallback: bool,
}

pub fn error_expectation(p: &TlsParams, residuals: &[f64]) -> ErrorExpectation {
    if p.vartheta > 1.0 || residuals.is_empty() {
        ErrorExpectation { value: p.mu, fallback: false }
    } else {
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        log::warn!("TLS shape {} <= 1 has no mean; using the sample mean {mean}", p.vartheta);
        ErrorExpectation { value: mean, fallback: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Revised {
    pub value: f64,
    pub clamped: bool,
}

/// Subtracts the expected residual and clamps at zero.
pub fn revise(forecast: f64, expected_error: f64) -> Revised {
    let v = forecast - expected_error;
    if v < 0.0 { Revised { value: 0.0, clamped: true } } else { Revised { value: v, clamped: false } }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mape: f64,
    pub rmse: f64,
    /// Points left out of the MAPE because their actual value is zero.
    pub zero_actuals: usize,
}

pub fn metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics, ErrModelError> {
    if actual.len() != predicted.len() {
        return Err(ErrModelError::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return Err(ErrModelError::Empty);
    }
    let mut ape = 0.0;
    let mut counted = 0usize;
    let mut sq = 0.0;
    for (&a, &p) in actual.iter().zip(predicted) {
        sq += (a - p) * (a - p);
        if a != 0.0 {
            ape += ((a - p) / a).abs();
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(ErrModelError::AllZeroActuals);
    }
    Ok(Metrics { mape: ape / counted as f64, rmse: (sq / actual.len() as f64).sqrt(), zero_actuals: actual.len() - counted })
}

/// Residuals of one source, either for one hour of day or pooled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualSet {
    pub source: Source,
    pub hour: Option<usize>,
    pub residuals: Vec<f64>,
}

/// One fitted cell of the error-model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell {
    pub mu: f64,
    /// Zero for a point mass (residuals without spread).
    pub epsilon: f64,
    pub vartheta: f64,
    pub n_samples: usize,
    pub fallback_flag: bool,
    pub expectation: f64,
    /// Smallest and largest residual seen, used to clip the support.
    pub min_residual: f64,
    pub max_residual: f64,
}

impl ErrorCell {
    pub fn is_point_mass(&self) -> bool {
        self.epsilon == 0.0
    }

    pub fn params(&self) -> Option<TlsParams> {
        (!self.is_point_mass()).then_some(TlsParams { mu: self.mu, epsilon: self.epsilon, vartheta: self.vartheta })
    }

    /// Support for discretisation: `mu ± 6 eps` clipped to the observed range.
    pub fn support(&self) -> (f64, f64) {
        if self.is_point_mass() {
            return (self.mu, self.mu);
        }
        let lo = (self.mu - 6.0 * self.epsilon).max(self.min_residual);
        let hi = (self.mu + 6.0 * self.epsilon).min(self.max_residual);
        if hi > lo { (lo, hi) } else { (self.mu - 6.0 * self.epsilon, self.mu + 6.0 * self.epsilon) }
    }

    fn point_mass(residuals: &[f64]) -> Self {
        let mean = if residuals.is_empty() { 0.0 } else { residuals.iter().sum::<f64>() / residuals.len() as f64 };
        Self {
            mu: mean,
            epsilon: 0.0,
            vartheta: MAX_SHAPE,
            n_samples: residuals.len(),
            fallback_flag: true,
            expectation: mean,
            min_residual: mean,
            max_residual: mean,
        }
    }

    fn fitted(residuals: &[f64]) -> Result<Self, ErrModelError> {
        let fit = fit_tls(residuals)?;
        let e = error_expectation(&fit.params, residuals);
        Ok(Self {
            mu: fit.params.mu,
            epsilon: fit.params.epsilon,
            vartheta: fit.params.vartheta,
            n_samples: residuals.len(),
            fallback_flag: e.fallback,
            expectation: e.value,
            min_residual: residuals.iter().copied().fold(f64::INFINITY, f64::min),
            max_residual: residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

fn spread(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Fitted error cells keyed `"<source>/<hour>"` or `"<source>/all"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrorModelSet {
    pub cells: BTreeMap<String, ErrorCell>,
}

pub fn cell_key(source: Source, hour: Option<usize>) -> String {
    match hour {
        Some(h) => format!("{}/{h}", source.key()),
        None => format!("{}/all", source.key()),
    }
}

impl ErrorModelSet {
    /// Fits one source's residuals, given per hour of day.
    ///
    /// Hours without spread become point masses. Hours with at least
    /// [`HOURLY_FIT_SAMPLES`] residuals get their own fit; the rest share a
    /// pooled fit over all hours that have spread.
    pub fn fit_source(&mut self, source: Source, by_hour: &[Vec<f64>]) -> Result<(), ErrModelError> {
        let mut pooled = Vec::new();
        let mut needs_pool = false;
        for (h, res) in by_hour.iter().enumerate() {
            check_finite(res)?;
            if res.is_empty() || spread(res) <= 1e-9 * (1.0 + res[0].abs()) {
                self.cells.insert(cell_key(source, Some(h)), ErrorCell::point_mass(res));
                continue;
            }
            pooled.extend_from_slice(res);
            if res.len() >= HOURLY_FIT_SAMPLES {
                let cell = match ErrorCell::fitted(res) {
                    Ok(c) => c,
                    Err(ErrModelError::ScaleUnderflow) => ErrorCell::point_mass(res),
                    Err(e) => return Err(e),
                };
                self.cells.insert(cell_key(source, Some(h)), cell);
            } else {
                needs_pool = true;
            }
        }
        if needs_pool || !pooled.is_empty() {
            let cell = if pooled.len() >= MIN_FIT_SAMPLES {
                match ErrorCell::fitted(&pooled) {
                    Ok(c) => c,
                    Err(ErrModelError::ScaleUnderflow) => ErrorCell::point_mass(&pooled),
                    Err(e) => return Err(e),
                }
            } else {
                ErrorCell::point_mass(&pooled)
            };
            self.cells.insert(cell_key(source, None), cell);
        }
        Ok(())
    }

    /// Cell used for `source` at `hour`: the hourly fit if present, else the pool.
    pub fn lookup(&self, source: Source, hour: usize) -> Option<&ErrorCell> {
        self.cells.get(&cell_key(source, Some(hour))).or_else(|| self.cells.get(&cell_key(source, None)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StudentT};

    fn p(mu: f64, e: f64, v: f64) -> TlsParams {
        TlsParams::new(mu, e, v).unwrap()
    }

    #[test]
    fn cauchy_and_normal_limits() {
        let c = p(2.0, 3.0, 1.0);
        assert!((c.pdf(2.0) - 1.0 / (std::f64::consts::PI * 3.0)).abs() < 1e-14);
        assert!((p(0.0, 1.0, 1.0).pdf(1.0) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-14);
        assert!((p(0.0, 1.0, 1e6).pdf(0.0) - 0.39894).abs() < 1e-3);
        assert!(tls_pdf(&TlsParams { mu: 0.0, epsilon: 0.0, vartheta: 1.0 }, 0.0).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for v in [1.0, 2.0, 5.0, 30.0] {
            let t = p(1.5, 2.0, v);
            let f = |x: f64| t.pdf(x);
            let inner = crate::sot::integrate(&f, 1.5 - 100.0, 1.5 + 100.0, 1e-12);
            // heavy tails beyond ±50 eps carry visible mass for small shapes
            let outside = 2.0 * StudentsT::new(0.0, 1.0, v).unwrap().cdf(-50.0);
            assert!((inner + outside - 1.0).abs() < 1e-6, "vartheta {v}: {inner} + {outside}");
        }
    }

    #[test]
    fn recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = StudentT::new(4.0).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| 2.0 + 0.5 * t.sample(&mut rng)).collect();
        let fit = fit_tls(&xs).unwrap();
        assert!((fit.params.mu - 2.0).abs() < 0.05, "{:?}", fit.params);
        assert!((fit.params.epsilon - 0.5).abs() < 0.05);
        assert!((fit.params.vartheta - 4.0).abs() < 1.0);
        assert!(fit.log_likelihood > normal_log_likelihood(&xs));
    }

    #[test]
    fn symmetric_residuals_give_zero_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = StudentT::new(3.0).unwrap();
        let half: Vec<f64> = (0..500).map(|_| t.sample(&mut rng)).collect();
        let xs: Vec<f64> = half.iter().flat_map(|&x| [x, -x]).collect();
        let fit = fit_tls(&xs).unwrap();
        assert!(fit.params.mu.abs() < 1e-6, "{}", fit.params.mu);
        assert!(error_expectation(&fit.params, &xs).value.abs() < 1e-6);
    }

    #[test]
    fn mostly_tied_residuals_become_a_point_mass() {
        let mut by_hour = vec![Vec::new(); 24];
        let mut res = vec![0.0; 200];
        for (i, r) in res.iter_mut().enumerate().step_by(17) {
            *r = 0.3 * (i as f64 + 1.0) / 200.0 - 0.1;
        }
        by_hour[19] = res;
        let mut set = ErrorModelSet::default();
        set.fit_source(Source::Pv, &by_hour).unwrap();
        let cell = set.lookup(Source::Pv, 19).unwrap();
        assert!(cell.is_point_mass() || cell.support().1 > cell.support().0);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_tls(&[1.0; 10]).unwrap_err(), ErrModelError::TooFewSamples(10));
        assert_eq!(fit_tls(&[1.0; 40]).unwrap_err(), ErrModelError::ScaleUnderflow);
        let mut xs = vec![0.0; 40];
        xs[3] = f64::NAN;
        assert_eq!(fit_tls(&xs).unwrap_err(), ErrModelError::NonFinite(3));
    }

    #[test]
    fn expectation_rules() {
        assert_eq!(error_expectation(&p(3.0, 1.0, 4.0), &[]).value, 3.0);
        let e = error_expectation(&p(3.0, 1.0, 0.8), &[1.0, 2.0, 6.0]);
        assert!(e.fallback);
        assert_eq!(e.value, 3.0);
    }

    #[test]
    fn revise_examples() {
        assert_eq!(revise(100.0, 5.0), Revised { value: 95.0, clamped: false });
        assert_eq!(revise(100.0, 0.0).value, 100.0);
        assert_eq!(revise(2.0, 5.0), Revised { value: 0.0, clamped: true });
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&[3.0, 4.0], &[3.0, 4.0]).unwrap();
        assert_eq!((m.mape, m.rmse), (0.0, 0.0));
        let m = metrics(&[100.0, 200.0], &[110.0, 180.0]).unwrap();
        assert!((m.mape - 0.1).abs() < 1e-15 && (m.rmse - 250f64.sqrt()).abs() < 1e-12);
        let m = metrics(&[50.0], &[40.0]).unwrap();
        assert!((m.mape - 0.2).abs() < 1e-15 && (m.rmse - 10.0).abs() < 1e-12);
        let m = metrics(&[0.0, 10.0], &[1.0, 9.0]).unwrap();
        assert_eq!(m.zero_actuals, 1);
        assert_eq!(metrics(&[0.0, 0.0], &[1.0, 2.0]).unwrap_err(), ErrModelError::AllZeroActuals);
        assert_eq!(metrics(&[1.0], &[1.0, 2.0]).unwrap_err(), ErrModelError::LengthMismatch(1, 2));
    }

    #[test]
    fn model_set_pools_sparse_hours() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = StudentT::new(5.0).unwrap();
        let mut by_hour: Vec<Vec<f64>> = vec![vec![0.0; 60]; 24];
        by_hour[12] = (0..150).map(|_| t.sample(&mut rng)).collect();
        by_hour[13] = (0..60).map(|_| 1.0 + t.sample(&mut rng)).collect();
        let mut set = ErrorModelSet::default();
        set.fit_source(Source::Pv, &by_hour).unwrap();
        assert!(set.lookup(Source::Pv, 0).unwrap().is_point_mass());
        assert!(set.cells.contains_key("pv/12"));
        assert!(!set.cells.contains_key("pv/13"));
        let pooled = set.lookup(Source::Pv, 13).unwrap();
        assert_eq!(pooled.n_samples, 210);
        let json = serde_json::to_string(&set).unwrap();
        let back: ErrorModelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }

    proptest! {
        #[test]
        fn pdf_is_symmetric(mu in -3200i32..3200, e in 0.01f64..20.0, v in 0.2f64..100.0, d in 0i32..6400) {
            // dyadic grid points keep mu ± d exact in floating point
            let (mu, d) = (mu as f64 / 64.0, d as f64 / 64.0);
            let t = TlsParams { mu, epsilon: e, vartheta: v };
            prop_assert_eq!(t.pdf(mu + d), t.pdf(mu - d));
        }

        #[test]
        fn revise_with_zero_is_clamped_identity(f in -100.0f64..100.0) {
            prop_assert_eq!(revise(f, 0.0).value, f.max(0.0));
        }

        #[test]
        fn metrics_ignore_order(pairs in prop::collection::vec((1.0f64..100.0, 0.0f64..100.0), 1..40), seed in any::<u64>()) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..a.len()).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            let a2: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let m1 = metrics(&a, &p).unwrap();
            let m2 = metrics(&a2, &p2).unwrap();
            prop_assert!((m1.mape - m2.mape).abs() < 1e-12 && (m1.rmse - m2.rmse).abs() < 1e-12);
        }
    }
}
