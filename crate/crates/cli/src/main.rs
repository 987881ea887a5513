//! `isogrid`: batch driver for the forecasting and scheduling pipeline.
//!
//! Exit codes: 0 on success, 1 on internal failures, 2 on configuration or
//! input errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isogrid_core::pipeline::{PipelineError, Report, Run, RunConfig};

#[derive(Parser)]
#[command(name = "isogrid", version, about = "Day-ahead forecasting and chance-constrained scheduling for isolated microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the worker thread count (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hourly dataset to the run directory.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Overrides the synthetic horizon in days.
        #[arg(long)]
        days: Option<usize>,
    },
    /// Search forecaster hyperparameters.
    Tune(Common),
    /// Train the hourly forecasters and the rollout comparison model.
    Train(Common),
    /// Forecast every test day.
    Forecast(Common),
    /// Fit error distributions to the calibration residuals.
    FitErrors(Common),
    /// Build the per-hour error sequences.
    Sequences(Common),
    /// Solve the day-ahead schedules.
    Schedule(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Export the scheduling models as CPLEX LP files.
    ExportLp(Common),
    /// Summarise forecasts and schedules.
    Report(Common),
}

fn build_run(common: &Common, days: Option<usize>) -> Result<Run, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(d) = days {
        cfg.synth.days = d;
    }
    Run::new(cfg)
}

fn print_report(r: &Report) {
    for (source, m) in &r.forecast {
        println!(
            "{source:>5}  MAPE proposed {:.4}  revised {:.4}  rollout {:.4}  baseline {:.4}",
            m.proposed.mape, m.revised.mape, m.rollout.mape, m.baseline.mape
        );
    }
    for c in &r.costs {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "alpha {:.3}  cost {}  baseline {}  not costlier on {}/{} days",
            c.alpha,
            fmt(c.mean_cost),
            fmt(c.mean_baseline_cost),
            c.proposed_not_costlier,
            c.days_compared
        );
    }
    if !r.integrity.failures.is_empty() {
        println!("{} schedules failed re-validation", r.integrity.failures.len());
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Generate { common, days } => {
            let run = build_run(&common, days)?;
            let path = run.generate()?;
            println!("wrote {}", path.display());
        }
        Command::Tune(c) => {
            let t = build_run(&c, None)?.tune()?;
            for (k, e) in &t.entries {
                println!("{k}: best objective {:?} after {} trials", e.best.objective, e.history.len());
            }
        }
        Command::Train(c) => {
            let infos = build_run(&c, None)?.train()?;
            println!("trained {} models", infos.len());
        }
        Command::Forecast(c) => {
            let rows = build_run(&c, None)?.forecast()?;
            println!("forecast {} points", rows.len());
        }
        Command::FitErrors(c) => {
            let set = build_run(&c, None)?.fit_errors()?;
            println!("fitted {} error cells", set.cells.len());
        }
        Command::Sequences(c) => {
            let seqs = build_run(&c, None)?.sequences()?;
            let longest = seqs.iter().map(|s| s.el.probs.len()).max().unwrap_or(0);
            println!("built {} hourly sequences, longest {longest} cells", seqs.len());
        }
        Command::Schedule(c) => {
            let entries = build_run(&c, None)?.schedule()?;
            let failed = entries.iter().filter(|e| e.error.is_some()).count();
            println!("solved {} schedules, {failed} failed", entries.len() - failed);
        }
        Command::Pipeline(c) => print_report(&build_run(&c, None)?.pipeline()?),
        Command::ExportLp(c) => {
            for p in build_run(&c, None)?.export_lp()? {
                println!("wrote {}", p.display());
            }
        }
        Command::Report(c) => print_report(&build_run(&c, None)?.report()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
