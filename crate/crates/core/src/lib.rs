//! Day-ahead scheduling toolkit for isolated microgrids.
//!
//! The crate is organised as a pipeline of independent stages:
//!
//! - [`data`]: hourly ingestion, hour-of-day reshaping, 7-day state windows,
//!   synthetic data generation.
//! - [`nn`]: dense feed-forward networks with exact backprop and Adam.
//! - [`drl`]: DDPG forecasting agent with rank-based prioritized replay.
//! - [`tuner`]: random / GP expected-improvement hyperparameter search.
//! - [`errmodel`]: t location-scale residual fitting, forecast revision, metrics.
//! - [`sot`]: probabilistic sequences and their addition/subtraction convolutions.
//! - [`sched`]: chance-constrained unit commitment model construction.
//! - [`lpsolve`]: dense simplex, branch-and-bound and CPLEX LP file I/O.
//! - [`pipeline`]: file-based orchestration used by the `isogrid` binary.
//!
//! Data-parallel loops (independent sub-series, trials, Monte-Carlo draws,
//! confidence levels) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod data;
pub mod drl;
pub mod errmodel;
pub mod lpsolve;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod sched;
pub mod sot;
pub mod tuner;

pub use data::Source;
