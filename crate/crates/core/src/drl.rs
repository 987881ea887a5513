//! DDPG forecaster with rank-based prioritised replay.
//!
//! Each agent watches a 7-value state (one hour of day over the last week),
//! emits the normalised next value as its action and is rewarded by how close
//! that action lands to what actually happened. The environment is exogenous:
//! the next state comes from the data whatever the action was.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SplitDataset, StateWindow, WINDOW};
use crate::errmodel::{metrics, ErrModelError};
use crate::nn::{Activation, Adam, Gradient, Mlp, NnError};

#[derive(Debug, Error)]
pub enum DrlError {
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("no history for hour {hour}: need {need} days, have {have}")]
    MissingHistory { hour: usize, need: usize, have: usize },
    #[error("expected {expected} hourly models, got {got}")]
    ModelCount { expected: usize, got: usize },
    #[error("no training windows")]
    NoWindows,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(NnError),
    #[error(transparent)]
    Metrics(#[from] ErrModelError),
}

impl From<NnError> for DrlError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(what) => DrlError::Diverged(format!("non-finite {what}")),
            other => DrlError::Network(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFn {
    NegAbsErr,
    NegMae,
    NegMse,
    NegMape,
    NegRmse,
    R2,
}

impl RewardFn {
    pub const ALL: [RewardFn; 6] = [RewardFn::NegAbsErr, RewardFn::NegMae, RewardFn::NegMse, RewardFn::NegMape, RewardFn::NegRmse, RewardFn::R2];
}

/// Running error sums over the current episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTracker {
    n: usize,
    sum_abs: f64,
    sum_sq: f64,
    n_ape: usize,
    sum_ape: f64,
    sum_actual: f64,
    sum_actual_sq: f64,
}

impl RewardTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one step and returns its reward.
    ///
    /// MAPE skips steps whose actual is zero and R² needs actuals with some
    /// spread; both fall back to the absolute-error reward when they cannot
    /// be evaluated.
    pub fn reward(&mut self, f: RewardFn, actual: f64, predicted: f64) -> f64 {
        let err = actual - predicted;
        self.n += 1;
        self.sum_abs += err.abs();
        self.sum_sq += err * err;
        self.sum_actual += actual;
        self.sum_actual_sq += actual * actual;
        if actual != 0.0 {
            self.n_ape += 1;
            self.sum_ape += (err / actual).abs();
        }
        let n = self.n as f64;
        match f {
            RewardFn::NegAbsErr => -err.abs(),
            RewardFn::NegMae => -self.sum_abs / n,
            RewardFn::NegMse => -self.sum_sq / n,
            RewardFn::NegRmse => -(self.sum_sq / n).sqrt(),
            RewardFn::NegMape => {
                if actual == 0.0 {
                    -err.abs()
                } else {
                    -self.sum_ape / self.n_ape as f64
                }
            }
            RewardFn::R2 => {
                let sst = self.sum_actual_sq - self.sum_actual * self.sum_actual / n;
                if sst > 1e-12 {
                    1.0 - self.sum_sq / sst
                } else {
                    -err.abs()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; WINDOW],
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; WINDOW],
    /// Last window of the episode: no bootstrapped value.
    pub done: bool,
}

/// Rank-based prioritised replay.
///
/// `order[r]` is the entry at rank `r + 1`. New entries go to rank 1 with
/// the running maximum priority; the full order is re-sorted by priority
/// every `resort_every` insertions.
#[derive(Debug, Clone)]
pub struct PerBuffer {
    capacity: usize,
    iota: f64,
    beta: f64,
    entries: Vec<Transition>,
    priorities: Vec<f64>,
    order: Vec<usize>,
    /// Prefix sums of `r^-iota` for ranks `1..=len`.
    cumulative: Vec<f64>,
    oldest: usize,
    max_priority: f64,
    since_sort: usize,
    resort_every: usize,
}

/// Default number of insertions between full re-ranks.
pub const RESORT_EVERY: usize = 64;

impl PerBuffer {
    pub fn new(capacity: usize, iota: f64, beta: f64) -> Result<Self, DrlError> {
        if capacity == 0 {
            return Err(DrlError::InvalidHyper("replay capacity must be positive".into()));
        }
        if !(iota >= 0.0 && iota.is_finite()) {
            return Err(DrlError::InvalidHyper(format!("iota {iota} must be finite and non-negative")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(DrlError::InvalidHyper(format!("beta {beta} outside [0, 1]")));
        }
        Ok(Self {
            capacity,
            iota,
            beta,
            entries: Vec::new(),
            priorities: Vec::new(),
            order: Vec::new(),
            cumulative: Vec::new(),
            oldest: 0,
            max_priority: 1.0,
            since_sort: 0,
            resort_every: RESORT_EVERY,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entry(&self, j: usize) -> &Transition {
        &self.entries[j]
    }

    pub fn priority(&self, j: usize) -> f64 {
        self.priorities[j]
    }

    /// Stores `t` with the largest priority seen so far, evicting the oldest
    /// entry when full.
    pub fn push(&mut self, t: Transition) {
        let j = if self.entries.len() < self.capacity {
            self.entries.push(t);
            self.priorities.push(self.max_priority);
            let r = self.entries.len() as f64;
            let prev = self.cumulative.last().copied().unwrap_or(0.0);
            self.cumulative.push(prev + r.powf(-self.iota));
            self.entries.len() - 1
        } else {
            let j = self.oldest;
            self.oldest = (self.oldest + 1) % self.capacity;
            self.entries[j] = t;
            self.priorities[j] = self.max_priority;
            let pos = self.order.iter().position(|&k| k == j).expect("entry is ranked");
            self.order.remove(pos);
            j
        };
        self.order.insert(0, j);
        self.since_sort += 1;
        if self.since_sort >= self.resort_every {
            self.resort();
        }
    }

    /// Re-ranks every entry by descending priority.
    pub fn resort(&mut self) {
        let p = &self.priorities;
        self.order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
        self.since_sort = 0;
    }

    pub fn set_priority(&mut self, j: usize, priority: f64) {
        self.priorities[j] = priority;
        if priority > self.max_priority {
            self.max_priority = priority;
        }
    }

    /// Probability of drawing rank `r` (1-based).
    pub fn rank_probability(&self, r: usize) -> f64 {
        (r as f64).powf(-self.iota) / self.cumulative[self.len() - 1]
    }

    /// `P(j)` for every entry, indexed by entry.
    pub fn sample_probabilities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (r, &j) in self.order.iter().enumerate() {
            out[j] = self.rank_probability(r + 1);
        }
        out
    }

    /// Rank (1-based) of entry `j`.
    pub fn rank(&self, j: usize) -> usize {
        self.order.iter().position(|&k| k == j).expect("entry is ranked") + 1
    }

    /// `1 / (S^beta · P^beta)` with `S` the buffer capacity.
    pub fn weight_for(&self, probability: f64) -> f64 {
        1.0 / ((self.capacity as f64).powf(self.beta) * probability.powf(self.beta))
    }

    pub fn importance_weight(&self, j: usize) -> f64 {
        self.weight_for(self.rank_probability(self.rank(j)))
    }

    /// Draws `n` entries with replacement; returns `(entry, probability)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<(usize, f64)> {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        let total = self.cumulative[self.len() - 1];
        let cum = &self.cumulative[..self.len()];
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let r = cum.partition_point(|&c| c <= u).min(self.len() - 1);
                (self.order[r], self.rank_probability(r + 1))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub hidden_width: usize,
    pub depth: usize,
    pub hidden_activation: Activation,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub varsigma: f64,
    pub iota: f64,
    pub beta: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub reward_fn: RewardFn,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            depth: 2,
            hidden_activation: Activation::Relu,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            gamma: 0.9,
            varsigma: 0.01,
            iota: 0.6,
            beta: 0.4,
            batch: 32,
            buffer_capacity: 10_000,
            reward_fn: RewardFn::NegAbsErr,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), DrlError> {
        let bad = |m: String| Err(DrlError::InvalidHyper(m));
        if self.hidden_width == 0 || self.depth == 0 {
            return bad("hidden width and depth must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.varsigma) {
            return bad(format!("varsigma {} outside [0, 1]", self.varsigma));
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0 && self.lr_actor.is_finite() && self.lr_critic.is_finite()) {
            return bad("learning rates must be finite and non-negative".into());
        }
        if self.batch == 0 || self.batch > self.buffer_capacity {
            return bad(format!("batch {} must be in 1..=capacity {}", self.batch, self.buffer_capacity));
        }
        Ok(())
    }

    fn dims(&self, inputs: usize) -> (Vec<usize>, Vec<Activation>) {
        let mut dims = vec![inputs];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.depth));
        dims.push(1);
        let acts = std::iter::repeat_n(self.hidden_activation, self.depth).collect();
        (dims, acts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Tail of the training windows held out for residual calibration.
    pub calibration_fraction: f64,
    pub noise_std: f64,
    pub noise_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { episodes: 60, calibration_fraction: 0.2, noise_std: 0.1, noise_decay: 0.999 }
    }
}

/// Statistics of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub mean_abs_td: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub gamma: f64,
    pub varsigma: f64,
    pub batch: usize,
    pub buffer: PerBuffer,
    pub noise_scale: f64,
    pub reward_fn: RewardFn,
}

fn state_action(s: &[f64; WINDOW], a: f64) -> [f64; WINDOW + 1] {
    let mut x = [0.0; WINDOW + 1];
    x[..WINDOW].copy_from_slice(s);
    x[WINDOW] = a;
    x
}

impl Agent {
    /// Fresh agent; the actor ends in a sigmoid so actions stay in `(0, 1)`.
    pub fn new<R: Rng + ?Sized>(hyper: &HyperParams, noise_scale: f64, rng: &mut R) -> Result<Self, DrlError> {
        hyper.validate()?;
        let (mut adims, mut aacts) = hyper.dims(WINDOW);
        aacts.push(Activation::Sigmoid);
        let actor = Mlp::new(&adims, &aacts, rng)?;
        adims[0] = WINDOW + 1;
        let (_, mut cacts) = hyper.dims(WINDOW + 1);
        cacts.push(Activation::Identity);
        let critic = Mlp::new(&adims, &cacts, rng)?;
        Ok(Self {
            actor_opt: Adam::new(&actor, hyper.lr_actor),
            critic_opt: Adam::new(&critic, hyper.lr_critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            gamma: hyper.gamma,
            varsigma: hyper.varsigma,
            batch: hyper.batch,
            buffer: PerBuffer::new(hyper.buffer_capacity, hyper.iota, hyper.beta)?,
            noise_scale,
            reward_fn: hyper.reward_fn,
        })
    }

    pub fn act(&self, state: &[f64; WINDOW]) -> Result<f64, DrlError> {
        Ok(self.actor.forward(state)?[0])
    }

    /// One critic and actor update from a prioritised batch, followed by the
    /// soft target update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StepStats, DrlError> {
        let picks = self.buffer.sample(rng, self.batch);
        let n = picks.len() as f64;
        let mut grad_c = Gradient::zeros_like(&self.critic);
        let mut loss = 0.0;
        let mut sum_td = 0.0;
        let mut refreshed = Vec::with_capacity(picks.len());
        for &(j, p) in &picks {
            let tr = self.buffer.entry(j);
            let target = if tr.done {
                tr.reward
            } else {
                let a2 = self.target_actor.forward(&tr.next_state)?[0];
                tr.reward + self.gamma * self.target_critic.forward(&state_action(&tr.next_state, a2))?[0]
            };
            let trace = self.critic.trace(&state_action(&tr.state, tr.action))?;
            let delta = target - trace.output()[0];
            let w = self.buffer.weight_for(p);
            loss += w * delta * delta / n;
            sum_td += delta.abs();
            self.critic.backward_into(&trace, &[-2.0 * w * delta / n], Some(&mut grad_c))?;
            refreshed.push((j, delta.abs()));
        }
        if !loss.is_finite() {
            return Err(DrlError::Diverged(format!("critic loss {loss}")));
        }
        self.critic_opt.step(&mut self.critic, &grad_c)?;

        let mut grad_a = Gradient::zeros_like(&self.actor);
        for &(j, _) in &picks {
            let s = self.buffer.entry(j).state;
            let at = self.actor.trace(&s)?;
            let ct = self.critic.trace(&state_action(&s, at.output()[0]))?;
            let dq = self.critic.backward_into(&ct, &[1.0], None)?[WINDOW];
            // ascend Q: descend -Q
            self.actor.backward_into(&at, &[-dq / n], Some(&mut grad_a))?;
        }
        self.actor_opt.step(&mut self.actor, &grad_a)?;

        for (j, d) in refreshed {
            self.buffer.set_priority(j, d);
        }
        self.target_critic.soft_update(&self.critic, self.varsigma)?;
        self.target_actor.soft_update(&self.actor, self.varsigma)?;
        Ok(StepStats { mean_abs_td: sum_td / n, critic_loss: loss })
    }

    /// Runs `episodes` chronological passes over `windows`.
    pub fn train_on<R: Rng + ?Sized>(&mut self, windows: &[StateWindow], cfg: &TrainConfig, rng: &mut R) -> Result<TrainLog, DrlError> {
        if windows.is_empty() {
            return Err(DrlError::NoWindows);
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut log = TrainLog::default();
        for _ in 0..cfg.episodes {
            let mut tracker = RewardTracker::new();
            let mut td = 0.0;
            let mut updates = 0usize;
            for (t, w) in windows.iter().enumerate() {
                let greedy = self.act(&w.history)?;
                let action = (greedy + self.noise_scale * normal.sample(rng)).clamp(0.0, 1.0);
                self.noise_scale *= cfg.noise_decay;
                let reward = tracker.reward(self.reward_fn, w.target, action);
                let (next_state, done) = match windows.get(t + 1) {
                    Some(nx) => (nx.history, false),
                    None => (w.history, true),
                };
                self.buffer.push(Transition { state: w.history, action, reward, next_state, done });
                if self.buffer.len() >= self.batch {
                    td += self.train_step(rng)?.mean_abs_td;
                    updates += 1;
                }
            }
            log.episode_td.push(if updates > 0 { td / updates as f64 } else { f64::NAN });
        }
        if !self.actor.flat_params().iter().all(|v| v.is_finite()) {
            return Err(DrlError::Diverged("non-finite actor parameters".into()));
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean |δ| per episode.
    pub episode_td: Vec<f64>,
}

/// Deployable part of a trained agent: the actor plus its normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub actor: crate::nn::Checkpoint,
    pub norm_min: f64,
    pub norm_max: f64,
    #[serde(skip)]
    net: Option<Mlp>,
}

impl Forecaster {
    pub fn new(actor: &Mlp, norm_min: f64, norm_max: f64) -> Self {
        Self { actor: actor.to_checkpoint(), norm_min, norm_max, net: Some(actor.clone()) }
    }

    fn net(&self) -> Result<std::borrow::Cow<'_, Mlp>, DrlError> {
        match &self.net {
            Some(n) => Ok(std::borrow::Cow::Borrowed(n)),
            None => Ok(std::borrow::Cow::Owned(Mlp::from_checkpoint(&self.actor)?)),
        }
    }

    /// Rebuilds the cached network after deserialisation.
    pub fn load(mut self) -> Result<Self, DrlError> {
        self.net = Some(Mlp::from_checkpoint(&self.actor)?);
        Ok(self)
    }

    fn normalize(&self, x: f64) -> f64 {
        (x - self.norm_min) / (self.norm_max - self.norm_min)
    }

    fn denormalize(&self, y: f64) -> f64 {
        (self.norm_min + y * (self.norm_max - self.norm_min)).max(0.0)
    }

    /// Predicts the next value (kW, clamped at zero) from 7 values in kW.
    pub fn predict(&self, history_kw: &[f64]) -> Result<f64, DrlError> {
        let state: Vec<f64> = history_kw.iter().map(|&x| self.normalize(x)).collect();
        Ok(self.denormalize(self.net()?.forward(&state)?[0]))
    }

    /// Prediction from an already normalised state, in kW.
    pub fn predict_normalized(&self, state: &[f64; WINDOW]) -> Result<f64, DrlError> {
        Ok(self.denormalize(self.net()?.forward(state)?[0]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Mape,
    /// All test actuals are zero, so MAPE is undefined.
    Rmse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedAgent {
    pub forecaster: Forecaster,
    pub test_score: f64,
    pub score_kind: ScoreKind,
    /// `predicted - actual` in kW on the held-out calibration windows.
    pub calibration_residuals: Vec<f64>,
    pub log: TrainLog,
}

/// Splits training windows into the part the agent learns from and the
/// calibration tail.
pub fn split_calibration(train: &[StateWindow], fraction: f64) -> (&[StateWindow], &[StateWindow]) {
    let n_cal = (fraction * train.len() as f64).round() as usize;
    let n_fit = train.len().saturating_sub(n_cal).max(1).min(train.len());
    train.split_at(n_fit)
}

/// Scores predictions against actuals: MAPE, or RMSE when every actual is 0.
pub fn score(actual: &[f64], predicted: &[f64]) -> Result<(f64, ScoreKind), DrlError> {
    match metrics(actual, predicted) {
        Ok(m) => Ok((m.mape, ScoreKind::Mape)),
        Err(ErrModelError::AllZeroActuals) => {
            let mse = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum::<f64>() / actual.len() as f64;
            Ok((mse.sqrt(), ScoreKind::Rmse))
        }
        Err(e) => Err(e.into()),
    }
}

/// Trains one agent on a sub-series and scores it on the test windows.
pub fn train_subseries(ds: &SplitDataset, hyper: &HyperParams, cfg: &TrainConfig, seed: u64) -> Result<TrainedAgent, DrlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(hyper, cfg.noise_std, &mut rng)?;
    let (fit, cal) = split_calibration(&ds.train, cfg.calibration_fraction);
    let log = agent.train_on(fit, cfg, &mut rng)?;
    let fc = Forecaster::new(&agent.actor, ds.norm_min, ds.norm_max);
    let mut calibration_residuals = Vec::with_capacity(cal.len());
    for w in cal {
        calibration_residuals.push(fc.predict_normalized(&w.history)? - ds.denormalize(w.target));
    }
    let test = if ds.test.is_empty() { cal } else { &ds.test[..] };
    let actual: Vec<f64> = test.iter().map(|w| ds.denormalize(w.target)).collect();
    let predicted = test.iter().map(|w| fc.predict_normalized(&w.history)).collect::<Result<Vec<_>, _>>()?;
    let (test_score, score_kind) = if test.is_empty() { (f64::NAN, ScoreKind::Mape) } else { score(&actual, &predicted)? };
    if !test_score.is_finite() {
        return Err(DrlError::Diverged(format!("test score {test_score}")));
    }
    Ok(TrainedAgent { forecaster: fc, test_score, score_kind, calibration_residuals, log })
}

/// What forecasts one hour of day.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HourlyModel {
    Agent(Forecaster),
    /// Sub-series with no variation over the training data.
    Constant(f64),
}

impl HourlyModel {
    pub fn id(&self) -> &'static str {
        match self {
            HourlyModel::Agent(_) => "agent",
            HourlyModel::Constant(_) => "constant",
        }
    }

    pub fn predict(&self, history_kw: &[f64]) -> Result<f64, DrlError> {
        match self {
            HourlyModel::Agent(f) => f.predict(history_kw),
            HourlyModel::Constant(v) => Ok(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub kw: Vec<f64>,
    pub model_ids: Vec<String>,
}

/// Single-step forecast of one day from the last 7 days, one model per hour.
pub fn forecast_day(models: &[HourlyModel], recent: &[[f64; 24]]) -> Result<ForecastResult, DrlError> {
    if models.len() != 24 {
        return Err(DrlError::ModelCount { expected: 24, got: models.len() });
    }
    if recent.len() < WINDOW {
        return Err(DrlError::MissingHistory { hour: 0, need: WINDOW, have: recent.len() });
    }
    let week = &recent[recent.len() - WINDOW..];
    let mut kw = Vec::with_capacity(24);
    for (h, m) in models.iter().enumerate() {
        let hist: Vec<f64> = week.iter().map(|d| d[h]).collect();
        kw.push(m.predict(&hist)?);
    }
    Ok(ForecastResult { kw, model_ids: models.iter().map(|m| m.id().to_string()).collect() })
}

/// Ablation: one agent over the continuous hourly series whose state is the
/// previous 7 hours; a day is forecast by feeding its own predictions back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutModel {
    pub forecaster: Forecaster,
}

impl RolloutModel {
    /// Trains on the hourly values of the given days.
    pub fn train(days: &[[f64; 24]], hyper: &HyperParams, cfg: &TrainConfig, seed: u64) -> Result<Self, DrlError> {
        let values: Vec<f64> = days.iter().flatten().copied().collect();
        if values.len() <= WINDOW {
            return Err(DrlError::NoWindows);
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Ok(Self { forecaster: Forecaster::new(&constant_actor(hyper)?, lo, lo + 1.0) });
        }
        let norm = |x: f64| (x - lo) / (hi - lo);
        let windows: Vec<StateWindow> = (0..values.len() - WINDOW)
            .map(|t| StateWindow { history: std::array::from_fn(|k| norm(values[t + k])), target: norm(values[t + WINDOW]), day: t + WINDOW })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent = Agent::new(hyper, cfg.noise_std, &mut rng)?;
        agent.train_on(&windows, cfg, &mut rng)?;
        Ok(Self { forecaster: Forecaster::new(&agent.actor, lo, hi) })
    }

    /// 24 recursive one-hour predictions from the 7 hours before the day.
    pub fn forecast_day(&self, last_hours_kw: &[f64]) -> Result<Vec<f64>, DrlError> {
        if last_hours_kw.len() < WINDOW {
            return Err(DrlError::MissingHistory { hour: 0, need: WINDOW, have: last_hours_kw.len() });
        }
        let mut buf: Vec<f64> = last_hours_kw[last_hours_kw.len() - WINDOW..].to_vec();
        let mut out = Vec::with_capacity(24);
        for _ in 0..24 {
            let y = self.forecaster.predict(&buf[buf.len() - WINDOW..])?;
            out.push(y);
            buf.push(y);
        }
        Ok(out)
    }
}

/// Actor whose output is always the sigmoid of zero, used when a series is
/// constant and there is nothing to learn.
fn constant_actor(hyper: &HyperParams) -> Result<Mlp, DrlError> {
    let (dims, mut acts) = hyper.dims(WINDOW);
    acts.push(Activation::Sigmoid);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Mlp::new(&dims, &acts, &mut rng)?;
    let zeros = vec![0.0; net.param_count()];
    net.set_flat_params(&zeros)?;
    Ok(net)
}
