//! Stage manifests: each pipeline stage records the content hashes of the
//! inputs it read and the artifacts it wrote, alongside its parameters.
//! Manifests make re-runs cheap (a stage whose inputs, parameters, and
//! outputs all match its manifest is a no-op) and detect stale artifacts
//! (a consumed artifact whose hash no longer matches what its producing
//! stage recorded). They contain no timestamps or absolute paths, so
//! identical runs produce byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    /// Stage parameters that affect artifact content, canonically formatted.
    pub params: BTreeMap<String, String>,
    /// Logical input label → sha256 hex of the file that was read.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file name (relative to the stage directory) → sha256 hex.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, params: BTreeMap<String, String>) -> Self {
        Manifest {
            stage: stage.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            params,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::runtime(format!("serializing manifest: {e}")))?;
        fs::write(path, body + "\n")
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let body = fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&body)
            .map_err(|e| CliError::data(format!("manifest {} is invalid: {e}", path.display())))
    }
}

/// Content hash of one file, as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Content hash of an in-memory byte string, as lowercase hex.
pub fn sha256_bytes(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// True when `manifest_path` records exactly `params`, every input file
/// currently hashes to its recorded value, and every recorded output file
/// exists with its recorded hash — i.e. the stage can be skipped.
pub fn stage_is_fresh(
    manifest_path: &Path,
    stage: &str,
    params: &BTreeMap<String, String>,
    inputs: &[(String, &Path)],
    stage_dir: &Path,
) -> bool {
    let Ok(manifest) = Manifest::load(manifest_path) else {
        return false;
    };
    if manifest.stage != stage
        || manifest.version != env!("CARGO_PKG_VERSION")
        || &manifest.params != params
    {
        return false;
    }
    if manifest.inputs.len() != inputs.len() {
        return false;
    }
    for (label, path) in inputs {
        match (manifest.inputs.get(label), sha256_file(path)) {
            (Some(recorded), Ok(current)) if *recorded == current => {}
            _ => return false,
        }
    }
    for (name, recorded) in &manifest.outputs {
        match sha256_file(&stage_dir.join(name)) {
            Ok(current) if current == *recorded => {}
            _ => return false,
        }
    }
    true
}

/// Verify that `path`, an artifact that `producer_stage` should have
/// written under `name`, still matches the hash in the producer's
/// manifest. Catches both missing upstream stages and artifacts edited or
/// corrupted after production.
pub fn verify_produced(
    producer_manifest: &Path,
    producer_stage: &str,
    name: &str,
    path: &Path,
) -> Result<(), CliError> {
    if !producer_manifest.exists() {
        return Err(CliError::data(format!(
            "{} has no manifest; run the {producer_stage} stage first",
            path.display()
        )));
    }
    let manifest = Manifest::load(producer_manifest)?;
    let recorded = manifest.outputs.get(name).ok_or_else(|| {
        CliError::data(format!(
            "manifest for {producer_stage} does not list {name}; rerun {producer_stage}"
        ))
    })?;
    let current = sha256_file(path).map_err(|_| {
        CliError::data(format!("{} is missing; rerun {producer_stage}", path.display()))
    })?;
    if &current != recorded {
        return Err(CliError::data(format!(
            "stale artifact {}: content hash does not match the {producer_stage} manifest; \
             rerun {producer_stage} (or the whole pipeline with --force)",
            path.display()
        )));
    }
    Ok(())
}
