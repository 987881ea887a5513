//! Hyperparameter search over agent configurations.
//!
//! Two strategies: plain random search, and a Gaussian-process surrogate
//! with expected improvement after a random warm-up. Each trial owns a
//! ChaCha stream derived from the search seed and its index, so results do
//! not depend on how trials are scheduled across threads.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::SplitDataset;
use crate::drl::{train_subseries, DrlError, HyperParams, RewardFn, TrainConfig};
use crate::nn::Activation;
use crate::par::{self, Exec};

/// Random candidates scored by expected improvement per suggestion.
pub const EI_CANDIDATES: usize = 512;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("no viable configuration: all {0} trials diverged")]
    NoViableConfiguration(usize),
    #[error("search budget of {0} trials is exhausted")]
    BudgetExhausted(usize),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    #[default]
    Smbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub hidden_width: Vec<usize>,
    pub depth: Vec<usize>,
    pub hidden_activation: Vec<Activation>,
    pub lr_actor: (f64, f64),
    pub lr_critic: (f64, f64),
    pub gamma: (f64, f64),
    pub varsigma: (f64, f64),
    pub iota: (f64, f64),
    pub beta: (f64, f64),
    pub batch: Vec<usize>,
    pub buffer_capacity: Vec<usize>,
    pub reward_fn: Vec<RewardFn>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden_width: vec![16, 32, 64, 128],
            depth: vec![1, 2, 3],
            hidden_activation: vec![Activation::Relu, Activation::Tanh, Activation::Sigmoid],
            lr_actor: (1e-4, 1e-2),
            lr_critic: (1e-4, 1e-2),
            gamma: (0.90, 0.999),
            varsigma: (1e-3, 1e-1),
            iota: (0.0, 1.0),
            beta: (0.0, 1.0),
            batch: vec![32, 64, 128],
            buffer_capacity: vec![2000, 10_000, 50_000],
            reward_fn: RewardFn::ALL.to_vec(),
        }
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + rng.random::<f64>() * (hi - lo)
    }
}

fn pick<T: Copy, R: Rng + ?Sized>(rng: &mut R, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn unit(x: f64, (lo, hi): (f64, f64), log: bool) -> f64 {
    if lo == hi {
        0.0
    } else if log {
        (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
    } else {
        (x - lo) / (hi - lo)
    }
}

fn one_hot<T: PartialEq>(out: &mut Vec<f64>, xs: &[T], v: &T) {
    if xs.len() > 1 {
        out.extend(xs.iter().map(|x| if x == v { 1.0 } else { 0.0 }));
    }
}

impl SearchSpace {
    /// Space containing only `h`.
    pub fn single(h: &HyperParams) -> Self {
        Self {
            hidden_width: vec![h.hidden_width],
            depth: vec![h.depth],
            hidden_activation: vec![h.hidden_activation],
            lr_actor: (h.lr_actor, h.lr_actor),
            lr_critic: (h.lr_critic, h.lr_critic),
            gamma: (h.gamma, h.gamma),
            varsigma: (h.varsigma, h.varsigma),
            iota: (h.iota, h.iota),
            beta: (h.beta, h.beta),
            batch: vec![h.batch],
            buffer_capacity: vec![h.buffer_capacity],
            reward_fn: vec![h.reward_fn],
        }
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        let bad = |m: &str| Err(TunerError::InvalidSpace(m.to_string()));
        if self.hidden_width.is_empty() || self.depth.is_empty() || self.hidden_activation.is_empty() || self.batch.is_empty() || self.buffer_capacity.is_empty() || self.reward_fn.is_empty() {
            return bad("categorical lists must be non-empty");
        }
        for (name, (lo, hi), positive) in [
            ("lr_actor", self.lr_actor, true),
            ("lr_critic", self.lr_critic, true),
            ("gamma", self.gamma, false),
            ("varsigma", self.varsigma, true),
            ("iota", self.iota, false),
            ("beta", self.beta, false),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) || (positive && lo <= 0.0) {
                return Err(TunerError::InvalidSpace(format!("{name} range [{lo}, {hi}]")));
            }
        }
        if !(self.gamma.1 < 1.0 && self.gamma.0 >= 0.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.beta.0 < 0.0 || self.beta.1 > 1.0 || self.varsigma.1 > 1.0 || self.iota.0 < 0.0 {
            return bad("beta and varsigma must lie in [0, 1], iota must be non-negative");
        }
        let min_cap = *self.buffer_capacity.iter().min().unwrap();
        if self.batch.iter().any(|&b| b == 0 || b > min_cap) {
            return bad("every batch size must fit in every buffer capacity");
        }
        if self.hidden_width.contains(&0) || self.depth.contains(&0) {
            return bad("widths and depths must be positive");
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperParams {
        HyperParams {
            hidden_width: pick(rng, &self.hidden_width),
            depth: pick(rng, &self.depth),
            hidden_activation: pick(rng, &self.hidden_activation),
            lr_actor: log_uniform(rng, self.lr_actor),
            lr_critic: log_uniform(rng, self.lr_critic),
            gamma: uniform(rng, self.gamma),
            varsigma: log_uniform(rng, self.varsigma),
            iota: uniform(rng, self.iota),
            beta: uniform(rng, self.beta),
            batch: pick(rng, &self.batch),
            buffer_capacity: pick(rng, &self.buffer_capacity),
            reward_fn: pick(rng, &self.reward_fn),
        }
    }

    pub fn contains(&self, h: &HyperParams) -> bool {
        let inside = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
        self.hidden_width.contains(&h.hidden_width)
            && self.depth.contains(&h.depth)
            && self.hidden_activation.contains(&h.hidden_activation)
            && inside(h.lr_actor, self.lr_actor)
            && inside(h.lr_critic, self.lr_critic)
            && inside(h.gamma, self.gamma)
            && inside(h.varsigma, self.varsigma)
            && inside(h.iota, self.iota)
            && inside(h.beta, self.beta)
            && self.batch.contains(&h.batch)
            && self.buffer_capacity.contains(&h.buffer_capacity)
            && self.reward_fn.contains(&h.reward_fn)
    }

    /// Surrogate features: one-hot categoricals, rates on a log scale, all in `[0, 1]`.
    pub fn encode(&self, h: &HyperParams) -> Vec<f64> {
        let mut v = Vec::new();
        one_hot(&mut v, &self.hidden_width, &h.hidden_width);
        one_hot(&mut v, &self.depth, &h.depth);
        one_hot(&mut v, &self.hidden_activation, &h.hidden_activation);
        v.push(unit(h.lr_actor, self.lr_actor, true));
        v.push(unit(h.lr_critic, self.lr_critic, true));
        v.push(unit(h.gamma, self.gamma, false));
        v.push(unit(h.varsigma, self.varsigma, true));
        v.push(unit(h.iota, self.iota, false));
        v.push(unit(h.beta, self.beta, false));
        one_hot(&mut v, &self.batch, &h.batch);
        one_hot(&mut v, &self.buffer_capacity, &h.buffer_capacity);
        one_hot(&mut v, &self.reward_fn, &h.reward_fn);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyper: HyperParams,
    /// Test score; `None` when the trial diverged.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    pub seed: u64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub budget: usize,
    pub strategy: Strategy,
    /// Spend the first trial on the default hyperparameters when the space
    /// contains them.
    pub start_from_default: bool,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self { budget: 10, strategy: Strategy::Smbo, start_from_default: true }
    }
}

/// Number of random suggestions before the surrogate takes over.
pub fn warmup_count(budget: usize) -> usize {
    5.max(budget / 10)
}

/// Suggestion for trial `k` that ignores the history.
fn blind_suggestion(space: &SearchSpace, config: &TunerConfig, seed: u64, k: usize) -> (HyperParams, u64) {
    let mut rng = trial_rng(seed, k);
    let train_seed = rng.random::<u64>();
    let default = HyperParams::default();
    if k == 0 && config.start_from_default && space.contains(&default) {
        return (default, train_seed);
    }
    (space.sample(&mut rng), train_seed)
}

/// Trial `k`'s private random stream.
pub fn trial_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

#[derive(Debug, Clone)]
pub struct TunerState {
    pub space: SearchSpace,
    pub config: TunerConfig,
    pub seed: u64,
    pub history: Vec<Trial>,
}

impl TunerState {
    pub fn new(space: SearchSpace, config: TunerConfig, seed: u64) -> Result<Self, TunerError> {
        space.validate()?;
        if config.budget == 0 {
            return Err(TunerError::BudgetExhausted(0));
        }
        Ok(Self { space, config, seed, history: Vec::new() })
    }

    /// Next point to evaluate and the seed its training run should use.
    pub fn suggest(&self) -> Result<(HyperParams, u64), TunerError> {
        let k = self.history.len();
        if k >= self.config.budget {
            return Err(TunerError::BudgetExhausted(self.config.budget));
        }
        let mut rng = trial_rng(self.seed, k);
        let train_seed = rng.random::<u64>();
        let warm = self.config.strategy == Strategy::Random || k < warmup_count(self.config.budget);
        let ok: Vec<&Trial> = self.history.iter().filter(|t| t.status == TrialStatus::Ok).collect();
        if warm || ok.len() < 2 {
            return Ok(blind_suggestion(&self.space, &self.config, self.seed, k));
        }
        let xs: Vec<Vec<f64>> = ok.iter().map(|t| self.space.encode(&t.hyper)).collect();
        let ys: Vec<f64> = ok.iter().map(|t| t.objective.unwrap()).collect();
        let gp = match Gp::fit(&xs, &ys) {
            Some(gp) => gp,
            None => return Ok((self.space.sample(&mut rng), train_seed)),
        };
        let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let mut top: Option<(f64, HyperParams)> = None;
        for _ in 0..EI_CANDIDATES {
            let h = self.space.sample(&mut rng);
            let ei = gp.expected_improvement(&self.space.encode(&h), best);
            if top.as_ref().is_none_or(|(e, _)| ei > *e) {
                top = Some((ei, h));
            }
        }
        Ok((top.unwrap().1, train_seed))
    }

    pub fn best(&self) -> Option<&Trial> {
        self.history
            .iter()
            .filter(|t| t.status == TrialStatus::Ok)
            .min_by(|a, b| a.objective.unwrap().total_cmp(&b.objective.unwrap()).then(a.index.cmp(&b.index)))
    }
}

/// Gaussian process with a squared-exponential kernel on standardised targets.
struct Gp {
    xs: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    length: f64,
    y_mean: f64,
    y_std: f64,
}

const GP_NOISE: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Gp {
    fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Option<Self> {
        let n = xs.len();
        let mut d: Vec<f64> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                d.push(sq_dist(&xs[i], &xs[j]).sqrt());
            }
        }
        d.sort_by(f64::total_cmp);
        let median = d.get(d.len() / 2).copied().unwrap_or(1.0);
        let length = if median > 1e-9 { median } else { 1.0 };
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let k = DMatrix::from_fn(n, n, |i, j| (-sq_dist(&xs[i], &xs[j]) / (2.0 * length * length)).exp() + if i == j { GP_NOISE } else { 0.0 });
        let chol = k.cholesky()?;
        let y = DVector::from_iterator(n, ys.iter().map(|y| (y - y_mean) / y_std));
        let alpha = chol.solve(&y);
        Some(Self { xs: xs.to_vec(), alpha, chol, length, y_mean, y_std })
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| (-sq_dist(xi, x) / (2.0 * self.length * self.length)).exp()));
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (1.0 + GP_NOISE - k.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }

    /// Expected improvement below `best` (minimisation).
    fn expected_improvement(&self, x: &[f64], best: f64) -> f64 {
        let (mu, s) = self.predict(x);
        if s < 1e-12 {
            return (best - mu).max(0.0);
        }
        let z = (best - mu) / s;
        let n = Normal::standard();
        (best - mu) * n.cdf(z) + s * n.pdf(z)
    }
}

/// Result of a finished search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReport {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Runs `budget` trials, evaluating each with `objective(hyper, seed)`.
///
/// Random searches and the warm-up phase evaluate in parallel batches; the
/// surrogate phase is sequential because each suggestion depends on every
/// earlier result.
pub fn search<F>(space: &SearchSpace, config: &TunerConfig, seed: u64, exec: Exec, objective: F) -> Result<SearchReport, TunerError>
where
    F: Fn(&HyperParams, u64) -> Result<f64, DrlError> + Sync + Send,
{
    let mut state = TunerState::new(space.clone(), config.clone(), seed)?;
    let run = |index: usize, hyper: HyperParams, seed: u64| {
        let t0 = Instant::now();
        let res = objective(&hyper, seed);
        let wall_time_s = t0.elapsed().as_secs_f64();
        match res {
            Ok(v) if v.is_finite() => Trial { index, hyper, objective: Some(v), status: TrialStatus::Ok, seed, wall_time_s, message: None },
            Ok(v) => Trial { index, hyper, objective: None, status: TrialStatus::Diverged, seed, wall_time_s, message: Some(format!("objective {v}")) },
            Err(e) => Trial { index, hyper, objective: None, status: TrialStatus::Diverged, seed, wall_time_s, message: Some(e.to_string()) },
        }
    };
    let batch = match config.strategy {
        Strategy::Random => config.budget,
        Strategy::Smbo => warmup_count(config.budget).min(config.budget),
    };
    // warm-up suggestions do not look at the history, so they can be drawn up front
    let warm: Vec<(HyperParams, u64)> = (0..batch).map(|k| blind_suggestion(space, config, seed, k)).collect();
    let trials = par::map_range(exec, batch, |k| run(k, warm[k].0.clone(), warm[k].1));
    state.history.extend(trials);
    while state.history.len() < config.budget {
        let (hyper, s) = state.suggest()?;
        let t = run(state.history.len(), hyper, s);
        log::debug!("trial {} objective {:?}", t.index, t.objective);
        state.history.push(t);
    }
    let best = state.best().cloned().ok_or(TunerError::NoViableConfiguration(state.history.len()))?;
    Ok(SearchReport { best, history: state.history })
}

/// Tunes one sub-series: each trial trains an agent and reports its test score.
pub fn run_search(ds: &SplitDataset, space: &SearchSpace, config: &TunerConfig, train: &TrainConfig, seed: u64, exec: Exec) -> Result<SearchReport, TunerError> {
    search(space, config, seed, exec, |h, s| train_subseries(ds, h, train, s).map(|a| a.test_score))
}
