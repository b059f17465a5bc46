//! Persisted server state for late joins.
//!
//! File layout: a first line `sha256 <hex>` followed by the JSON payload. The
//! digest covers the payload bytes exactly as written.

use std::path::Path;

use kfed::{DataMatrix, ServerState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunState {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub k: usize,
    /// Number of devices in the run; the next free device id.
    pub num_devices: usize,
    pub tau_means: Vec<Vec<f64>>,
}

impl RunState {
    pub fn server(&self) -> CliResult<ServerState> {
        Ok(ServerState {
            k: self.k,
            tau_means: DataMatrix::from_rows(&self.tau_means)?,
        })
    }

    pub fn encode(&self) -> String {
        let payload = serde_json::to_string_pretty(self).expect("state serializes");
        let digest = hex::encode(Sha256::digest(payload.as_bytes()));
        format!("sha256 {digest}\n{payload}\n")
    }

    pub fn decode(text: &str, path: &Path) -> CliResult<Self> {
        let malformed = |why: &str| CliError::Validation(format!("state file {}: {why}", path.display()));
        let (header, body) = text.split_once('\n').ok_or_else(|| malformed("missing header"))?;
        let expected = header
            .strip_prefix("sha256 ")
            .ok_or_else(|| malformed("missing sha256 header"))?;
        let payload = body.strip_suffix('\n').unwrap_or(body);
        let found = hex::encode(Sha256::digest(payload.as_bytes()));
        if found != expected {
            return Err(CliError::Checksum {
                path: path.display().to_string(),
                expected: expected.to_string(),
                found,
            });
        }
        serde_json::from_str(payload).map_err(|e| malformed(&e.to_string()))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        Ok(kfed::io::write_atomic(path, self.encode().as_bytes())?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&text, path)
    }
}
