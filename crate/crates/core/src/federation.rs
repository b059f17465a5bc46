//! Server-side aggregation of device centers in one communication round.
//!
//! Devices run [`local_cluster`] and upload their centers once. The server
//! seeds `k` points by farthest-point traversal over all uploaded centers,
//! assigns every uploaded center to its nearest seed (a single Lloyd
//! assignment round), and sends each device the global label of each of its
//! local clusters. A device's rows inherit the label of their local cluster.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KfedError, Result};
use crate::linalg::{squared_distance, DataMatrix};
use crate::local::{cluster_means, local_cluster_with, Clustering, LocalResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng;

/// Assignment of global rows to devices plus per-device cluster counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePartition {
    pub device_rows: Vec<Vec<usize>>,
    /// `k^(z)`: number of local clusters each device solves for.
    pub k_per_device: Vec<usize>,
    /// Size-ratio bound: every non-empty per-device cluster subset holds at
    /// least `n_r / m0` rows.
    pub m0: f64,
    /// Global cluster count.
    pub k: usize,
}

impl DevicePartition {
    pub fn new(device_rows: Vec<Vec<usize>>, k_per_device: Vec<usize>, m0: f64, k: usize) -> Result<Self> {
        if device_rows.len() != k_per_device.len() {
            return Err(KfedError::Partition(format!(
                "{} devices but {} k values",
                device_rows.len(),
                k_per_device.len()
            )));
        }
        if device_rows.is_empty() {
            return Err(KfedError::Partition("no devices".into()));
        }
        if !(m0.is_finite() && m0 >= 1.0) {
            return Err(KfedError::Partition(format!("m0 must be >= 1, got {m0}")));
        }
        let p = Self {
            device_rows,
            k_per_device,
            m0,
            k,
        };
        if p.k_prime() > k {
            return Err(KfedError::Partition(format!(
                "k' = {} exceeds k = {k}",
                p.k_prime()
            )));
        }
        for (z, (rows, &kz)) in p.device_rows.iter().zip(&p.k_per_device).enumerate() {
            if !rows.is_empty() && kz == 0 {
                return Err(KfedError::Partition(format!("device {z} has rows but k^(z) = 0")));
            }
        }
        Ok(p)
    }

    /// Derives `k^(z)` from ground-truth labels. `m0` defaults to the
    /// tightest value consistent with the labels, `max n_r / n^z_r`.
    pub fn from_labels(device_rows: Vec<Vec<usize>>, labels: &[usize], k: usize, m0: Option<f64>) -> Result<Self> {
        let mut kz = Vec::with_capacity(device_rows.len());
        for rows in &device_rows {
            let mut present = vec![false; k];
            for &i in rows {
                let l = *labels.get(i).ok_or_else(|| {
                    KfedError::Partition(format!("row {i} out of range for {} labels", labels.len()))
                })?;
                if l >= k {
                    return Err(KfedError::Partition(format!("label {l} outside 0..{k}")));
                }
                present[l] = true;
            }
            kz.push(present.iter().filter(|&&b| b).count());
        }
        let m0 = match m0 {
            Some(m) => m,
            None => estimate_m0(&device_rows, labels, k),
        };
        Self::new(device_rows, kz, m0, k)
    }

    pub fn num_devices(&self) -> usize {
        self.device_rows.len()
    }

    /// `k' = max_z k^(z)`.
    pub fn k_prime(&self) -> usize {
        self.k_per_device.iter().copied().max().unwrap_or(0)
    }

    pub fn num_rows(&self) -> usize {
        self.device_rows.iter().map(Vec::len).sum()
    }

    /// Checks that the device rows are disjoint and cover `0..n` exactly.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (z, rows) in self.device_rows.iter().enumerate() {
            for &i in rows {
                if i >= n {
                    return Err(KfedError::Partition(format!(
                        "device {z} holds row {i}, data has {n} rows"
                    )));
                }
                if seen[i] {
                    return Err(KfedError::Partition(format!("row {i} held by more than one device")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(KfedError::Partition(format!("row {i} is on no device")));
        }
        Ok(())
    }
}

/// `max over (z, r) with n^z_r > 0 of n_r / n^z_r`, at least 1.
pub fn estimate_m0(device_rows: &[Vec<usize>], labels: &[usize], k: usize) -> f64 {
    let mut n_r = vec![0usize; k];
    for &l in labels {
        if l < k {
            n_r[l] += 1;
        }
    }
    let mut m0: f64 = 1.0;
    for rows in device_rows {
        let mut local = vec![0usize; k];
        for &i in rows {
            if let Some(&l) = labels.get(i) {
                if l < k {
                    local[l] += 1;
                }
            }
        }
        for (r, &c) in local.iter().enumerate() {
            if c > 0 {
                m0 = m0.max(n_r[r] as f64 / c as f64);
            }
        }
    }
    m0
}

/// One device's upload: its local centers and the local cluster of each of
/// its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCenters {
    pub device_id: usize,
    pub centers: DataMatrix,
    /// Local cluster index per device row, in device-row order.
    pub local_assignment: Vec<usize>,
}

impl DeviceCenters {
    pub fn from_local(device_id: usize, local: &LocalResult) -> Self {
        Self {
            device_id,
            centers: local.clusters.centers.clone(),
            local_assignment: local.clusters.assignment.clone(),
        }
    }

    pub fn k_z(&self) -> usize {
        self.centers.nrows()
    }

    /// SHA-256 over the local assignment as little-endian `u32`s, hex encoded.
    pub fn assignment_digest(&self) -> String {
        let mut h = Sha256::new();
        for &a in &self.local_assignment {
            h.update((a as u32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Upload size: `k^(z) · d` f64 values.
    pub fn upload_bytes(&self) -> usize {
        self.centers.nrows() * self.centers.ncols() * std::mem::size_of::<f64>()
    }
}

/// A device center identified by its device and local index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CenterRef {
    pub device: usize,
    pub index: usize,
}

/// The `k` seeds chosen by farthest-point traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct InitSet {
    pub points: DataMatrix,
    pub provenance: Vec<CenterRef>,
    pub distance_count: usize,
}

/// Farthest-point traversal over all uploaded centers.
///
/// `M` starts as the centers of `start_device` (lowest device id by default)
/// and grows by the center farthest from `M` until it holds `k` points. Ties
/// go to the lowest `(device_id, index)`. Each distance evaluation is counted.
pub fn farthest_point_init(all: &[DeviceCenters], k: usize, start_device: Option<usize>) -> Result<InitSet> {
    let flat = flatten(all);
    if flat.len() < k || k == 0 {
        return Err(KfedError::TooFewCenters {
            available: flat.len(),
            k,
        });
    }
    let start = match start_device {
        Some(z) => z,
        None => flat[0].0.device,
    };
    let start_idx: Vec<usize> = (0..flat.len()).filter(|&i| flat[i].0.device == start).collect();
    if start_idx.is_empty() {
        return Err(KfedError::InvalidParameter(format!(
            "start device {start} submitted no centers"
        )));
    }
    if start_idx.len() > k {
        return Err(KfedError::InvalidParameter(format!(
            "start device {start} has {} centers, more than k = {k}",
            start_idx.len()
        )));
    }

    let mut in_m = vec![false; flat.len()];
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; flat.len()];
    let mut count = 0usize;
    for &s in &start_idx {
        in_m[s] = true;
        chosen.push(s);
        for (slot, (_, c)) in dist.iter_mut().zip(&flat) {
            *slot = slot.min(squared_distance(c, flat[s].1));
        }
        count += flat.len();
    }
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..flat.len() {
            if in_m[i] {
                continue;
            }
            if best.is_none_or(|b| dist[i] > dist[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("enough centers checked above");
        in_m[pick] = true;
        chosen.push(pick);
        for (slot, (_, c)) in dist.iter_mut().zip(&flat) {
            *slot = slot.min(squared_distance(c, flat[pick].1));
        }
        count += flat.len();
    }
    let rows: Vec<&[f64]> = chosen.iter().map(|&i| flat[i].1).collect();
    Ok(InitSet {
        points: DataMatrix::from_rows(&rows)?,
        provenance: chosen.iter().map(|&i| flat[i].0).collect(),
        distance_count: count,
    })
}

/// Uploaded centers in `(device_id, index)` order.
fn flatten(all: &[DeviceCenters]) -> Vec<(CenterRef, &[f64])> {
    let mut order: Vec<&DeviceCenters> = all.iter().collect();
    order.sort_by_key(|d| d.device_id);
    order
        .into_iter()
        .flat_map(|d| {
            d.centers.rows().enumerate().map(move |(index, c)| {
                (
                    CenterRef {
                        device: d.device_id,
                        index,
                    },
                    c,
                )
            })
        })
        .collect()
}

/// Clusters of device centers produced by the single assignment round.
#[derive(Debug, Clone, PartialEq)]
pub struct TauAssignment {
    pub tau: Vec<Vec<CenterRef>>,
    /// Global label of every uploaded center, indexed like the input slice.
    pub labels: Vec<Vec<usize>>,
    pub distance_count: usize,
}

/// Assigns every device center to its nearest seed (ties to the lowest seed
/// index). Exactly one assignment pass; seeds are not re-centered.
pub fn one_round_lloyd(all: &[DeviceCenters], seeds: &DataMatrix) -> TauAssignment {
    let k = seeds.nrows();
    let mut tau = vec![Vec::new(); k];
    let mut count = 0;
    let mut labels = Vec::with_capacity(all.len());
    for dev in all {
        let mut dl = Vec::with_capacity(dev.k_z());
        for (index, c) in dev.centers.rows().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (j, s) in seeds.rows().enumerate() {
                let d = squared_distance(c, s);
                count += 1;
                if d < best.1 {
                    best = (j, d);
                }
            }
            dl.push(best.0);
            tau[best.0].push(CenterRef {
                device: dev.device_id,
                index,
            });
        }
        labels.push(dl);
    }
    for t in &mut tau {
        t.sort();
    }
    TauAssignment {
        tau,
        labels,
        distance_count: count,
    }
}

/// What the server keeps after aggregation: the mean of each `τ_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub k: usize,
    pub tau_means: DataMatrix,
}

impl ServerState {
    /// `μ(τ_r)` for every `r`; an empty `τ_r` keeps its seed point.
    pub fn from_tau(all: &[DeviceCenters], tau: &TauAssignment, seeds: &DataMatrix) -> Result<Self> {
        let k = seeds.nrows();
        let d = seeds.ncols();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (dev, labels) in all.iter().zip(&tau.labels) {
            for (c, &l) in dev.centers.rows().zip(labels) {
                counts[l] += 1;
                for (s, x) in sums[l].iter_mut().zip(c) {
                    *s += x;
                }
            }
        }
        let mut values = Vec::with_capacity(k * d);
        for r in 0..k {
            if counts[r] == 0 {
                values.extend_from_slice(seeds.row(r));
            } else {
                values.extend(sums[r].iter().map(|s| s / counts[r] as f64));
            }
        }
        Ok(Self {
            k,
            tau_means: DataMatrix::new(k, d, values)?,
        })
    }
}

/// Labels the centers of a device that did not take part in aggregation.
/// Uses exactly `k^(z) · k` distance computations and contacts no other
/// device.
pub fn assign_new_device(state: Option<&ServerState>, new: &DeviceCenters) -> Result<(Vec<usize>, usize)> {
    let state = state.ok_or(KfedError::NoAggregationState)?;
    if new.centers.ncols() != state.tau_means.ncols() {
        return Err(KfedError::Shape(format!(
            "device centers have dimension {}, server state {}",
            new.centers.ncols(),
            state.tau_means.ncols()
        )));
    }
    let mut count = 0;
    let labels = new
        .centers
        .rows()
        .map(|c| {
            let mut best = (0, f64::INFINITY);
            for (j, m) in state.tau_means.rows().enumerate() {
                count += 1;
                let d = squared_distance(c, m);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect();
    Ok((labels, count))
}

/// Server-side result of steps 2–7.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub init: InitSet,
    pub tau: TauAssignment,
    pub server: ServerState,
}

impl Aggregation {
    /// Distance computations spent on seeding plus assignment.
    pub fn distance_count(&self) -> usize {
        self.init.distance_count + self.tau.distance_count
    }
}

/// Farthest-point seeding followed by one assignment round.
pub fn aggregate(uploads: &[DeviceCenters], k: usize, start_device: Option<usize>) -> Result<Aggregation> {
    let init = farthest_point_init(uploads, k, start_device)?;
    let tau = one_round_lloyd(uploads, &init.points);
    let server = ServerState::from_tau(uploads, &tau, &init.points)?;
    Ok(Aggregation { init, tau, server })
}

/// Global clustering induced by the `τ` sets over the participating rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedClustering {
    pub tau: Vec<Vec<CenterRef>>,
    /// Global row indices covered (rows of participating devices), ascending.
    pub rows: Vec<usize>,
    /// Clustering aligned with `rows`.
    pub global: Clustering,
}

impl InducedClustering {
    /// Label per global row; `None` for rows of excluded devices.
    pub fn labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (&i, &l) in self.rows.iter().zip(&self.global.assignment) {
            out[i] = Some(l);
        }
        out
    }
}

/// Row `i` on device `z` in local cluster `s` joins `T'_r` when
/// `θ^(z)_s ∈ τ_r`. Cluster centers are the means of their rows, or `μ(τ_r)`
/// for clusters that received no rows.
pub fn induce(
    a: &DataMatrix,
    partition: &DevicePartition,
    uploads: &[DeviceCenters],
    tau: &TauAssignment,
    server: &ServerState,
) -> Result<InducedClustering> {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (dev, labels) in uploads.iter().zip(&tau.labels) {
        let rows = partition.device_rows.get(dev.device_id).ok_or_else(|| {
            KfedError::Partition(format!("unknown device {}", dev.device_id))
        })?;
        if rows.len() != dev.local_assignment.len() {
            return Err(KfedError::Shape(format!(
                "device {} has {} rows but {} local labels",
                dev.device_id,
                rows.len(),
                dev.local_assignment.len()
            )));
        }
        for (&i, &s) in rows.iter().zip(&dev.local_assignment) {
            pairs.push((i, labels[s]));
        }
    }
    pairs.sort_unstable();
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let assignment: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let k = server.k;
    let centers = if rows.is_empty() {
        server.tau_means.clone()
    } else {
        let sub = a.select_rows(&rows)?;
        let means = cluster_means(&sub, &assignment, k)?;
        let flat: Vec<Vec<f64>> = means
            .into_iter()
            .enumerate()
            .map(|(r, m)| m.unwrap_or_else(|| server.tau_means.row(r).to_vec()))
            .collect();
        DataMatrix::from_rows(&flat)?
    };
    Ok(InducedClustering {
        tau: tau.tau.clone(),
        rows,
        global: Clustering::new(assignment, centers)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Server,
    Device(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    CentersUpload,
    LabelsDownload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: Endpoint,
    pub to: Endpoint,
    pub kind: MessageKind,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpsAccounting {
    /// Distance computations of steps 2–7 (seeding plus assignment).
    pub pairwise_distance_count: usize,
    pub init_distance_count: usize,
    pub assign_distance_count: usize,
    pub messages_sent: usize,
    /// Upload size per participating device, in device order.
    pub upload_bytes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfedOptions {
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Devices that drop out before uploading.
    pub exclude: Vec<usize>,
    /// Device whose centers initialize `M`; lowest participating id if unset.
    pub start_device: Option<usize>,
}

impl Default for KfedOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            exclude: Vec::new(),
            start_device: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfedRun {
    pub uploads: Vec<DeviceCenters>,
    pub local: Vec<LocalResult>,
    pub aggregation: Aggregation,
    pub induced: InducedClustering,
    pub accounting: OpsAccounting,
    pub log: Vec<Message>,
}

impl KfedRun {
    pub fn server(&self) -> &ServerState {
        &self.aggregation.server
    }
}

/// Seed used for device `z`'s local solve under run seed `seed`.
pub fn device_seed(seed: u64, device: usize) -> u64 {
    rng::mix(seed, device as u64 + 1)
}

/// Runs the whole protocol: local solves on every participating device
/// (in parallel), then aggregation and the induced clustering.
pub fn run_kfed(partition: &DevicePartition, a: &DataMatrix, opts: &KfedOptions) -> Result<KfedRun> {
    partition.validate(a.nrows())?;
    let participating: Vec<usize> = (0..partition.num_devices())
        .filter(|z| !opts.exclude.contains(z) && !partition.device_rows[*z].is_empty())
        .collect();

    let solved: Vec<(DeviceCenters, LocalResult)> = participating
        .par_iter()
        .map(|&z| {
            let data = a.select_rows(&partition.device_rows[z])?;
            let local = local_cluster_with(
                &data,
                partition.k_per_device[z],
                device_seed(opts.seed, z),
                opts.tol,
                opts.max_iter,
            )?;
            Ok((DeviceCenters::from_local(z, &local), local))
        })
        .collect::<Result<_>>()?;
    let (uploads, local): (Vec<_>, Vec<_>) = solved.into_iter().unzip();

    let aggregation = aggregate(&uploads, partition.k, opts.start_device)?;
    let induced = induce(a, partition, &uploads, &aggregation.tau, &aggregation.server)?;

    let mut log = Vec::with_capacity(2 * uploads.len());
    for u in &uploads {
        log.push(Message {
            from: Endpoint::Device(u.device_id),
            to: Endpoint::Server,
            kind: MessageKind::CentersUpload,
            bytes: u.upload_bytes(),
        });
    }
    for u in &uploads {
        log.push(Message {
            from: Endpoint::Server,
            to: Endpoint::Device(u.device_id),
            kind: MessageKind::LabelsDownload,
            bytes: u.k_z() * std::mem::size_of::<u32>(),
        });
    }
    let accounting = OpsAccounting {
        pairwise_distance_count: aggregation.distance_count(),
        init_distance_count: aggregation.init.distance_count,
        assign_distance_count: aggregation.tau.distance_count,
        messages_sent: log.len(),
        upload_bytes: uploads.iter().map(DeviceCenters::upload_bytes).collect(),
    };
    Ok(KfedRun {
        uploads,
        local,
        aggregation,
        induced,
        accounting,
        log,
    })
}
