use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use orient_core::query::{QueryConfig, Strategy};
use orient_core::trainer::NoHooks;
use orient_core::{Dataset, MetricsReport, Session, TrainConfig};
use serde::Serialize;

use super::train::read_dataset;
use crate::config::{parse_strategy, TrainOpts};
use crate::error::{CliError, CliResult};

#[derive(Args, Clone, Debug)]
pub struct SweepArgs {
    /// Dataset file. Give one per seed to pair them in order.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 25, 50, 100])]
    pub budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "joint,random,up,hp", value_parser = parse_strategy)]
    pub strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    /// Summary CSV, one row per strategy and budget.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-run CSV.
    #[arg(long)]
    pub runs_out: Option<PathBuf>,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Training flags; budget, strategy and seed come from the sweep. The
    /// hold-out fraction defaults to 0.2.
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRun {
    pub strategy: String,
    pub budget: usize,
    pub seed: u64,
    pub train_acc: f64,
    pub train_nmi: f64,
    pub holdout_acc: Option<f64>,
    pub holdout_nmi: Option<f64>,
    pub spent: usize,
}

/// Means over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy: String,
    pub budget: usize,
    pub train_acc: f64,
    pub train_nmi: f64,
    pub holdout_acc: Option<f64>,
    pub holdout_nmi: Option<f64>,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

impl SweepReport {
    pub fn row(&self, strategy: Strategy, budget: usize) -> Option<&SweepRow> {
        let name = strategy.to_string();
        self.rows.iter().find(|r| r.strategy == name && r.budget == budget)
    }
}

struct Job {
    strategy: Strategy,
    budget: usize,
    seed: u64,
    data: usize,
}

fn score(report: Option<&MetricsReport>, orientation: &str) -> CliResult<Option<(f64, f64)>> {
    let Some(report) = report else { return Ok(None) };
    let m = report
        .get(orientation)
        .ok_or_else(|| CliError::Validation(format!("dataset has no orientation {orientation:?}")))?;
    Ok(Some((m.acc, m.nmi)))
}

fn run_one(base: &TrainConfig, job: &Job, dataset: &Dataset) -> CliResult<SweepRun> {
    let mut config = base.clone();
    config.seed = job.seed;
    config.query = QueryConfig {
        epsilon: base.query.epsilon,
        ..QueryConfig::new(job.budget, job.strategy)
    };
    let summary = Session::simulated(dataset, config)?.run(&mut NoHooks)?;
    let (train_acc, train_nmi) = score(Some(&summary.metrics), &base.orientation)?.unwrap_or((f64::NAN, f64::NAN));
    let held = score(summary.holdout_metrics.as_ref(), &base.orientation)?;
    Ok(SweepRun {
        strategy: job.strategy.to_string(),
        budget: job.budget,
        seed: job.seed,
        train_acc,
        train_nmi,
        holdout_acc: held.map(|h| h.0),
        holdout_nmi: held.map(|h| h.1),
        spent: summary.spent,
    })
}

pub fn cmd_budget_sweep(args: &SweepArgs) -> CliResult<SweepReport> {
    if args.opts.budget.is_some()
        || args.opts.initial_random.is_some()
        || args.opts.strategy.is_some()
        || args.opts.seed.is_some()
    {
        return Err(CliError::Validation(
            "budget-sweep sets budget, initial random queries, strategy and seed itself".into(),
        ));
    }
    if args.data.len() != 1 && args.data.len() != args.seeds.len() {
        return Err(CliError::Validation(format!(
            "{} datasets for {} seeds: give one, or one per seed",
            args.data.len(),
            args.seeds.len()
        )));
    }
    if args.budgets.is_empty() || args.strategies.is_empty() || args.seeds.is_empty() {
        return Err(CliError::Validation(
            "budgets, strategies and seeds must be non-empty".into(),
        ));
    }
    let mut base = args.opts.resolve()?;
    if args.opts.holdout.is_none() {
        base.holdout_fraction = Some(0.2);
    }
    let datasets = args
        .data
        .iter()
        .map(|p| read_dataset(p))
        .collect::<CliResult<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for &strategy in &args.strategies {
        for &budget in &args.budgets {
            for (k, &seed) in args.seeds.iter().enumerate() {
                let data = if datasets.len() == 1 { 0 } else { k };
                jobs.push(Job {
                    strategy,
                    budget,
                    seed,
                    data,
                });
            }
        }
    }
    let results: Mutex<Vec<Option<CliResult<SweepRun>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                let r = run_one(&base, job, &datasets[job.data]);
                tracing::info!(strategy = %job.strategy, budget = job.budget, seed = job.seed, "sweep run finished");
                results.lock().expect("sweep results poisoned")[k] = Some(r);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("sweep results poisoned")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<CliResult<Vec<_>>>()?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rows = runs
        .chunks(args.seeds.len())
        .map(|group| {
            let pick = |f: fn(&SweepRun) -> f64| mean(&group.iter().map(f).collect::<Vec<_>>());
            let held =
                |f: fn(&SweepRun) -> Option<f64>| group.iter().map(f).collect::<Option<Vec<_>>>().map(|v| mean(&v));
            SweepRow {
                strategy: group[0].strategy.clone(),
                budget: group[0].budget,
                train_acc: pick(|r| r.train_acc),
                train_nmi: pick(|r| r.train_nmi),
                holdout_acc: held(|r| r.holdout_acc),
                holdout_nmi: held(|r| r.holdout_nmi),
                seeds: group.len(),
            }
        })
        .collect();
    let report = SweepReport { rows, runs };
    if let Some(path) = &args.out {
        write_csv(path, &report.rows)?;
    }
    if let Some(path) = &args.runs_out {
        write_csv(path, &report.runs)?;
    }
    Ok(report)
}

fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
