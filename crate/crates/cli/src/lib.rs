//! Command-line front end: dataset generation, training runs with a
//! simulated oracle, evaluation, the theory checks, budget sweeps and the
//! interactive service.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

use clap::{Parser, Subcommand};
use orient_core::MetricsReport;

use commands::eval::EvalArgs;
use commands::gen::GenArgs;
use commands::serve::ServeArgs;
use commands::sweep::SweepArgs;
use commands::theory::TheoryArgs;
use commands::train::TrainArgs;
pub use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "orient",
    version,
    about = "Interactive clustering toward a chosen orientation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with two labelings.
    Gen(GenArgs),
    /// Train against a simulated oracle and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Run the numerical checks of the gradient-gap bounds.
    Theory(TheoryArgs),
    /// Train across budgets, strategies and seeds and tabulate accuracy.
    BudgetSweep(SweepArgs),
    /// Serve the HTTP and WebSocket API.
    Serve(ServeArgs),
}

fn print_metrics(title: &str, report: &MetricsReport) {
    println!("{title}");
    println!(
        "  {:<16} {:>7} {:>7} {:>7} {:>7}",
        "orientation", "acc", "nmi", "ari", "f"
    );
    for (name, m) in &report.orientations {
        println!(
            "  {:<16} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            name, m.acc, m.nmi, m.ari, m.f
        );
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(args) => {
            let d = commands::gen::cmd_gen(&args)?;
            println!("wrote {} samples to {}", d.len(), args.out.display());
        }
        Command::Train(args) => {
            let outcome = commands::train::cmd_train(&args)?;
            let s = &outcome.summary;
            println!(
                "run {} in {}: {} steps, {} queries, {} answers{}",
                outcome.manifest.run_id,
                outcome.manifest.out_dir.display(),
                s.steps,
                s.spent,
                s.answers,
                if s.stopped_early { " (stopped early)" } else { "" }
            );
            print_metrics("train", &s.metrics);
            if let Some(h) = &s.holdout_metrics {
                print_metrics("hold-out", h);
            }
        }
        Command::Eval(args) => {
            let report = commands::eval::cmd_eval(&args)?;
            print_metrics("evaluation", &report);
        }
        Command::Theory(args) => {
            let report = commands::theory::cmd_theory(&args)?;
            println!("{}", report.render());
            if args.strict && !report.all_passed() {
                return Err(CliError::Runtime("theory checks failed".into()));
            }
        }
        Command::BudgetSweep(args) => {
            let report = commands::sweep::cmd_budget_sweep(&args)?;
            println!(
                "{:<8} {:>6} {:>9} {:>9} {:>11} {:>11}",
                "strategy", "budget", "train_acc", "train_nmi", "holdout_acc", "holdout_nmi"
            );
            for r in &report.rows {
                println!(
                    "{:<8} {:>6} {:>9.4} {:>9.4} {:>11} {:>11}",
                    r.strategy,
                    r.budget,
                    r.train_acc,
                    r.train_nmi,
                    opt(r.holdout_acc),
                    opt(r.holdout_nmi)
                );
            }
        }
        Command::Serve(args) => commands::serve::cmd_serve(&args)?,
    }
    Ok(())
}
