//! Experiment configuration: a strict, versioned JSON document.

use std::path::{Path, PathBuf};

use kfed::datagen::{MeanPlacement, MixtureSpec, PartitionSpec, Sampling};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Table1,
    CSweep,
    CostRatio,
    SeparationProfile,
    SingleRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub k: usize,
    pub d: usize,
    #[serde(default = "one")]
    pub sigma_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_per_cluster")]
    pub per_cluster: usize,
    /// Auto placement at the run's `c` and `m0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<MeanPlacement>,
    #[serde(default)]
    pub sampling: Sampling,
}

fn one() -> f64 {
    1.0
}

fn default_per_cluster() -> usize {
    200
}

fn default_c() -> f64 {
    kfed::separation::DEFAULT_C
}

fn default_tol() -> f64 {
    kfed::local::DEFAULT_TOL
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub experiment: Experiment,
    pub mixture: MixtureConfig,
    pub partition: PartitionSpec,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Used for auto mean placement and the separation thresholds. Falls
    /// back to the structured partition's `m0`, then to an estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude_devices: Vec<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    /// Content hash. The output directory is not part of a run's identity.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let compact = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn m0_for_placement(&self) -> f64 {
        self.m0.unwrap_or(match self.partition {
            PartitionSpec::Structured { m0, .. } => m0,
            PartitionSpec::Iid { .. } => 1.0,
        })
    }

    pub fn mixture_spec(&self, seed: u64, c: f64) -> MixtureSpec {
        let mx = &self.mixture;
        MixtureSpec {
            k: mx.k,
            d: mx.d,
            sigma_max: mx.sigma_max,
            weights: mx.weights.clone(),
            means: mx.means.clone().unwrap_or(MeanPlacement::Auto {
                c,
                m0: self.m0_for_placement(),
                factor: None,
            }),
            n: mx.k * mx.per_cluster,
            sampling: mx.sampling,
            seed,
        }
    }

    /// Values of `c` the experiment visits.
    pub fn c_grid(&self) -> Vec<f64> {
        if self.experiment == Experiment::CSweep {
            self.c_values.clone()
        } else {
            vec![self.c]
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.experiment == Experiment::CSweep && self.c_values.is_empty() {
            return bad("c_sweep needs c_values".into());
        }
        if self.experiment == Experiment::CostRatio && !matches!(self.partition, PartitionSpec::Structured { .. }) {
            return bad("cost_ratio compares a structured partition against IID; partition must be structured".into());
        }
        if let Some(m0) = self.m0 {
            if !(m0.is_finite() && m0 >= 1.0) {
                return bad(format!("m0 must be >= 1, got {m0}"));
            }
        }
        for c in self.c_grid() {
            if !(c.is_finite() && c >= 0.0) {
                return bad(format!("c must be finite and non-negative, got {c}"));
            }
            self.mixture_spec(self.seeds[0], c).validate()?;
        }
        Ok(())
    }
}
