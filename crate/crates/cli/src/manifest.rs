//! Reproducibility records: the manifest ties a run's outputs to the exact
//! configuration and seed that produced them, and the error record captures
//! principled refusals with their advice.
//!
//! Result files carry no timings or host details, so re-running a manifest
//! reproduces them byte for byte; the wall time lives here instead.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// Where the effective master seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSource {
    CliFlag,
    /// The `SUPMIN_SEED` environment variable.
    Environment,
    ConfigFile,
    Default,
}

/// One scheduled unit of work and the stream index block it draws from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub name: String,
    /// Base stream index; the job consumes indices from here upward. A pure
    /// function of the config, independent of worker count.
    pub stream_base: u64,
}

/// Digest of one output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// The full reproducibility record for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub code_version: String,
    pub master_seed: u64,
    pub seed_source: SeedSource,
    /// Full parsed configuration (after defaults), echoed back.
    pub config: RunConfig,
    pub jobs: Vec<JobRecord>,
    pub outputs: Vec<OutputRecord>,
    /// Informational only; never part of result files.
    pub wall_time_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Digest already-written output files (paths relative to `dir`).
pub fn digest_outputs(dir: &Path, files: &[String]) -> Result<Vec<OutputRecord>, CliError> {
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let bytes = std::fs::read(dir.join(f))
            .map_err(|e| CliError::Internal(format!("cannot digest output {f}: {e}")))?;
        out.push(OutputRecord {
            file: f.clone(),
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(out)
}

/// A machine-readable record of a refusal or failure, written next to the
/// results so scripted callers get the advice without scraping stderr.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    /// Exit code category: 1 config, 2 refusal, 3 internal.
    pub exit_code: i32,
    pub message: String,
}

pub fn write_error_record(dir: &Path, record: &ErrorRecord) {
    if std::fs::create_dir_all(dir).is_err() {
        return;
    }
    if let Ok(json) = serde_json::to_string_pretty(record) {
        // Best effort: failing to write the record must not mask the error.
        let _ = std::fs::write(dir.join("error.json"), json + "\n");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"hello"),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
