//! Everything needed to repeat a training run.

use std::path::{Path, PathBuf};

use orient_core::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Short content hash of the config and the dataset bytes.
    pub run_id: String,
    pub seed: u64,
    pub dataset: PathBuf,
    pub dataset_sha256: String,
    pub out_dir: PathBuf,
    pub config: TrainConfig,
    pub tool_version: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config: TrainConfig, dataset: &Path, out_dir: &Path) -> CliResult<Self> {
        let dataset_sha256 = file_digest(dataset)?;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&config)?);
        h.update(dataset_sha256.as_bytes());
        Ok(Self {
            run_id: hex(&h.finalize()[..6]),
            seed: config.seed,
            dataset: dataset.to_path_buf(),
            dataset_sha256,
            out_dir: out_dir.to_path_buf(),
            config,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let m: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if m.seed != m.config.seed {
            return Err(CliError::Validation(format!(
                "manifest seed {} disagrees with config seed {}",
                m.seed, m.config.seed
            )));
        }
        Ok(m)
    }

    /// Fails when the dataset on disk is not the one the manifest recorded.
    pub fn check_dataset(&self) -> CliResult<()> {
        let now = file_digest(&self.dataset)?;
        if now != self.dataset_sha256 {
            return Err(CliError::Validation(format!(
                "{} changed since the manifest was written (sha256 {now}, expected {})",
                self.dataset.display(),
                self.dataset_sha256
            )));
        }
        Ok(())
    }
}
