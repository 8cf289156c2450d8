use std::path::PathBuf;

use clap::Args;
use orient_core::model::{Checkpoint, Encoder};
use orient_core::trainer::dataset_labels;
use orient_core::MetricsReport;

use super::train::read_dataset;
use crate::error::{CliError, CliResult};
use crate::output::write_json;

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Scores a checkpoint's assignments against every orientation.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<MetricsReport> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.checkpoint.display())))?;
    let encoder = Encoder::from_checkpoint(&ckpt)?;
    let dataset = read_dataset(&args.data)?;
    let (pred, _) = encoder.assign(&dataset.features(), 256)?;
    let mut report = MetricsReport::new();
    for (name, truth) in dataset_labels(&dataset)? {
        report.insert(name, &pred, &truth)?;
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(report)
}
