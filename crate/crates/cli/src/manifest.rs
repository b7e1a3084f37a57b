//! Per-stage run manifests recording config, seed and file digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub versions: BTreeMap<String, String>,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Paths are stored relative to `root` when they live under it.
fn digest_all(root: &Path, paths: &[&Path]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            let shown = p.strip_prefix(root).unwrap_or(p);
            Ok(FileDigest {
                path: shown.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn build(
        stage: &str,
        root: &Path,
        seed: u64,
        config: &BTreeMap<String, String>,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<Self> {
        let versions = BTreeMap::from([
            ("multidex".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest".to_string(), "1".to_string()),
        ]);
        Ok(Self {
            stage: stage.to_string(),
            versions,
            seed,
            config: config.clone(),
            inputs: digest_all(root, inputs)?,
            outputs: digest_all(root, outputs)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
