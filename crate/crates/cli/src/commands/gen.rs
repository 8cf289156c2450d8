use std::path::PathBuf;

use clap::{Args, ValueEnum};
use orient_core::data::{gen_feature_bundle, gen_gauss_cross, save_records, Dataset, GeneratorConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    /// Four blobs on a cross: the wide axis is the default grouping.
    GaussCross,
    /// Two informative feature bundles, one per orientation.
    FeatureBundle,
}

#[derive(Args, Clone, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = Generator::GaussCross)]
    pub kind: Generator,
    #[arg(long, default_value_t = 800)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 8.0)]
    pub default_gap: f64,
    #[arg(long, default_value_t = 4.0)]
    pub personalized_gap: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn generate(args: &GenArgs) -> CliResult<Dataset> {
    let config = GeneratorConfig {
        n: args.n,
        dim: args.dim,
        default_gap: args.default_gap,
        personalized_gap: args.personalized_gap,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    Ok(match args.kind {
        Generator::GaussCross => gen_gauss_cross(&config)?,
        Generator::FeatureBundle => gen_feature_bundle(&config)?,
    })
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<Dataset> {
    let dataset = generate(args)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_records(&dataset, &args.out).map_err(|e| CliError::from(e).context(args.out.display()))?;
    Ok(dataset)
}
