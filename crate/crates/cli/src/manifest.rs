use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mmalign_core::checkpoint::file_digest;
use mmalign_core::{Error, ModelConfig, Result, TrainConfig};

/// Immutable record of a training run, written before the first epoch so a
/// crashed run still leaves its provenance behind.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// SHA-256 per input file, keyed by split name.
    pub data_digests: BTreeMap<String, String>,
    pub data_paths: BTreeMap<String, PathBuf>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest encode: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: bad manifest: {e}", path.display())))
    }

    /// Abort unless `data` hashes to the digest recorded for `split`.
    pub fn verify_input(&self, split: &str, data: &Path) -> Result<()> {
        let want = self.data_digests.get(split).ok_or_else(|| {
            Error::Data(format!("manifest has no digest for split {split:?}"))
        })?;
        let got = file_digest(data)?;
        if &got != want {
            return Err(Error::Data(format!(
                "digest mismatch for {}: manifest {want}, file {got}",
                data.display()
            )));
        }
        Ok(())
    }
}
