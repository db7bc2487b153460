//! Run manifests and dataset fingerprinting.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sgc_core::data::DataPaths;
use sgc_core::model::{ModelSpec, TrainConfig};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Metadata written alongside every training run. The manifest is written
/// before training starts (with no end timestamp) and rewritten on
/// completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_id: usize,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub metrics_path: String,
    pub params_path: String,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)
            .with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Content hash over the four dataset files, stable across reruns on
/// identical inputs.
pub fn dataset_fingerprint(paths: &DataPaths) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in [&paths.stations, &paths.trips, &paths.weather, &paths.holidays] {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
