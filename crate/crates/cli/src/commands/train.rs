use std::path::{Path, PathBuf};

use clap::Args;
use orient_core::data::{load_records, Dataset};
use orient_core::numerics::project_2d;
use orient_core::trainer::{Control, EpochSummary, RunSummary, TrainHooks};
use orient_core::{MetricsReport, Session};
use serde::Serialize;

use crate::config::TrainOpts;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::output::{write_json, write_jsonl};

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    /// Dataset in JSON lines.
    #[arg(long, required_unless_present = "manifest")]
    pub data: Option<PathBuf>,
    /// Repeat the run a manifest describes; training flags are not allowed.
    #[arg(long, conflicts_with = "data")]
    pub manifest: Option<PathBuf>,
    /// Run directory (defaults to the manifest's).
    #[arg(long, required_unless_present = "manifest")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub orientation: String,
    pub metrics: MetricsReport,
    pub holdout_metrics: Option<MetricsReport>,
    pub spent: usize,
    pub answers: usize,
    pub steps: u64,
    pub stopped_early: bool,
}

pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub summary: RunSummary,
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    load_records(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainOutcome> {
    let manifest = match (&args.manifest, &args.data) {
        (Some(path), _) => {
            if args.opts != TrainOpts::default() {
                return Err(CliError::Validation(
                    "training flags cannot be combined with --manifest".into(),
                ));
            }
            let mut m = RunManifest::load(path)?;
            if let Some(out) = &args.out {
                m.out_dir = out.clone();
            }
            m
        }
        (None, Some(data)) => {
            let out = args
                .out
                .as_ref()
                .ok_or_else(|| CliError::Validation("--out is required".into()))?;
            RunManifest::new(args.opts.resolve()?, data, out)?
        }
        (None, None) => return Err(CliError::Validation("either --data or --manifest is required".into())),
    };
    let summary = run_manifest(&manifest)?;
    Ok(TrainOutcome { manifest, summary })
}

#[derive(Default)]
struct EpochLog(Vec<EpochSummary>);

impl TrainHooks for EpochLog {
    fn on_epoch(&mut self, _session: &Session, summary: &EpochSummary) -> Control {
        self.0.push(summary.clone());
        Control::Continue
    }
}

/// Trains with a simulated oracle and writes the run directory.
pub fn run_manifest(manifest: &RunManifest) -> CliResult<RunSummary> {
    manifest.check_dataset()?;
    let dataset = read_dataset(&manifest.dataset)?;
    let mut session = Session::simulated(&dataset, manifest.config.clone())?;
    let mut epochs = EpochLog::default();
    let summary = session.run(&mut epochs)?;

    let out = &manifest.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    write_json(&out.join("manifest.json"), manifest)?;
    write_jsonl(&out.join("trace.jsonl"), session.trace())?;
    write_jsonl(&out.join("epochs.jsonl"), &epochs.0)?;
    write_jsonl(&out.join("queries.jsonl"), session.queries())?;
    write_jsonl(&out.join("constraints.jsonl"), session.store().answer_log())?;
    write_json(
        &out.join("metrics.json"),
        &RunMetrics {
            run_id: manifest.run_id.clone(),
            orientation: manifest.config.orientation.clone(),
            metrics: summary.metrics.clone(),
            holdout_metrics: summary.holdout_metrics.clone(),
            spent: summary.spent,
            answers: summary.answers,
            steps: summary.steps,
            stopped_early: summary.stopped_early,
        },
    )?;
    session.encoder().to_checkpoint().save(&out.join("checkpoint.json"))?;
    write_projection(&out.join("projection.csv"), &dataset, &session, &summary.assignments)?;
    Ok(summary)
}

/// PCA of the learned features with assignments, split and labels per sample.
fn write_projection(path: &Path, dataset: &Dataset, session: &Session, assignments: &[usize]) -> CliResult<()> {
    let points = project_2d(&session.embeddings()?)?;
    let orientations = dataset.orientations();
    let mut split = vec!["train"; dataset.len()];
    for &i in session.holdout_indices() {
        split[i] = "holdout";
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "id".to_string(),
        "pc1".into(),
        "pc2".into(),
        "assignment".into(),
        "split".into(),
    ];
    header.extend(orientations.iter().map(|o| format!("label_{o}")));
    w.write_record(&header)?;
    for (i, r) in dataset.records().iter().enumerate() {
        let mut row = vec![
            r.id.clone(),
            points[i][0].to_string(),
            points[i][1].to_string(),
            assignments[i].to_string(),
            split[i].to_string(),
        ];
        row.extend(orientations.iter().map(|o| r.labels[o].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
