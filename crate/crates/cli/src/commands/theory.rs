use std::path::PathBuf;

use clap::Args;
use orient_core::theory::{run_suite, TheoryReport, TheorySuiteConfig};

use crate::error::CliResult;
use crate::output::write_json;

#[derive(Args, Clone, Debug)]
pub struct TheoryArgs {
    /// Random tiny instances to draw.
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    /// Queries answered along each chain.
    #[arg(long, default_value_t = 4)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit with a runtime failure when any check fails.
    #[arg(long)]
    pub strict: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_theory(args: &TheoryArgs) -> CliResult<TheoryReport> {
    let cfg = TheorySuiteConfig {
        instances: args.instances,
        queries: args.queries,
        seed: args.seed,
        ..TheorySuiteConfig::default()
    };
    let report = run_suite(&cfg)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(report)
}
