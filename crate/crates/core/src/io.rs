//! On-disk formats.
//!
//! * data CSV: one row per point, `d` comma-separated values, no header
//! * labels CSV: one non-negative integer per line, no header
//! * partition JSON: `{"<device_id>": [row, ...], ...}`
//! * spec JSON: [`InstanceSpec`]
//! * upload JSON: [`UploadMessage`]
//!
//! CSV files may start with `#` comment lines; readers skip them. Floats are
//! written in Rust's shortest round-trip form, so a write/read cycle is
//! lossless.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{MixtureSpec, PartitionSpec};
use crate::error::{KfedError, Result};
use crate::federation::DeviceCenters;
use crate::linalg::DataMatrix;

pub const DATA_FILE: &str = "data.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const PARTITION_FILE: &str = "partition.json";
pub const SPEC_FILE: &str = "spec.json";

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KfedError::io(path, e))
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| KfedError::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| KfedError::io(&tmp, e))?;
    f.sync_all().map_err(|e| KfedError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| KfedError::io(path, e))
}

fn comment_block(comments: &[String]) -> String {
    comments.iter().map(|c| format!("# {c}\n")).collect()
}

pub fn format_data_csv(a: &DataMatrix, comments: &[String]) -> String {
    let mut out = comment_block(comments);
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_data_csv(text: &str) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| KfedError::Parse(format!("data row {i}: {e}")))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| KfedError::Parse(format!("data row {i}: {f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    DataMatrix::from_rows(&rows)
}

pub fn read_data_csv(path: &Path) -> Result<DataMatrix> {
    parse_data_csv(&read_to_string(path)?).map_err(|e| with_path(path, e))
}

pub fn write_data_csv(path: &Path, a: &DataMatrix, comments: &[String]) -> Result<()> {
    write_atomic(path, format_data_csv(a, comments).as_bytes())
}

pub fn format_labels_csv(labels: &[usize], comments: &[String]) -> String {
    let mut out = comment_block(comments);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

/// Parses labels. With `k` given, a label outside `0..k` is an error naming
/// its row.
pub fn parse_labels_csv(text: &str, k: Option<usize>) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = labels.len();
        let l: usize = line
            .parse()
            .map_err(|e| KfedError::Parse(format!("labels row {row}: {line:?}: {e}")))?;
        if let Some(k) = k {
            if l >= k {
                return Err(KfedError::Parse(format!(
                    "labels row {row}: cluster id {l} not in 0..{k}"
                )));
            }
        }
        labels.push(l);
    }
    Ok(labels)
}

pub fn read_labels_csv(path: &Path, k: Option<usize>) -> Result<Vec<usize>> {
    parse_labels_csv(&read_to_string(path)?, k).map_err(|e| with_path(path, e))
}

pub fn write_labels_csv(path: &Path, labels: &[usize], comments: &[String]) -> Result<()> {
    write_atomic(path, format_labels_csv(labels, comments).as_bytes())
}

fn with_path(path: &Path, e: KfedError) -> KfedError {
    match e {
        KfedError::Parse(msg) => KfedError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub fn format_partition_json(device_rows: &[Vec<usize>]) -> String {
    let map: BTreeMap<usize, &Vec<usize>> = device_rows.iter().enumerate().collect();
    let mut s = serde_json::to_string_pretty(&map).expect("serializable map");
    s.push('\n');
    s
}

/// Device ids must be exactly `0..Z`.
pub fn parse_partition_json(text: &str) -> Result<Vec<Vec<usize>>> {
    let map: BTreeMap<usize, Vec<usize>> =
        serde_json::from_str(text).map_err(|e| KfedError::Parse(format!("partition: {e}")))?;
    for (expect, got) in map.keys().enumerate() {
        if *got != expect {
            return Err(KfedError::Parse(format!(
                "partition: device ids must be 0..{}, missing {expect}",
                map.len()
            )));
        }
    }
    Ok(map.into_values().collect())
}

pub fn read_partition_json(path: &Path) -> Result<Vec<Vec<usize>>> {
    parse_partition_json(&read_to_string(path)?).map_err(|e| with_path(path, e))
}

pub fn write_partition_json(path: &Path, device_rows: &[Vec<usize>]) -> Result<()> {
    write_atomic(path, format_partition_json(device_rows).as_bytes())
}

/// Everything needed to regenerate an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub mixture: MixtureSpec,
    pub partition: PartitionSpec,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| KfedError::Parse(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| KfedError::Parse(format!("{}: {e}", path.display())))
}

/// Device → server upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadMessage {
    pub device_id: usize,
    pub k_z: usize,
    pub centers: Vec<Vec<f64>>,
    pub assignment_digest: String,
}

impl UploadMessage {
    pub fn from_device(dev: &DeviceCenters) -> Self {
        Self {
            device_id: dev.device_id,
            k_z: dev.k_z(),
            centers: dev.centers.to_rows(),
            assignment_digest: dev.assignment_digest(),
        }
    }

    /// Server-side view of the upload. The local assignment never leaves the
    /// device, so it is empty here.
    pub fn to_device(&self) -> Result<DeviceCenters> {
        if self.centers.len() != self.k_z {
            return Err(KfedError::Parse(format!(
                "upload from device {}: k_z = {} but {} centers",
                self.device_id,
                self.k_z,
                self.centers.len()
            )));
        }
        Ok(DeviceCenters {
            device_id: self.device_id,
            centers: DataMatrix::from_rows(&self.centers)?,
            local_assignment: Vec::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}
