//! Local clustering on one device: spectral projection, approximate seeding,
//! ⅓-ratio thresholding and Lloyd refinement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KfedError, Result};
use crate::linalg::{self, squared_distance, DataMatrix, ProjectedMatrix};
use crate::rng;

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Seeded k-means++ restarts used by [`approx_seed`].
pub const SEED_RESTARTS: usize = 5;

/// A partition of row indices into `k` clusters plus one center per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub centers: DataMatrix,
}

impl Clustering {
    pub fn new(assignment: Vec<usize>, centers: DataMatrix) -> Result<Self> {
        let k = centers.nrows();
        if let Some((i, &c)) = assignment.iter().enumerate().find(|(_, &c)| c >= k) {
            return Err(KfedError::InvalidParameter(format!(
                "row {i} assigned to cluster {c}, only {k} centers"
            )));
        }
        Ok(Self {
            k,
            assignment,
            centers,
        })
    }

    /// Builds a clustering whose centers are the means of the labelled rows.
    /// Every one of the `k` clusters must be non-empty.
    pub fn from_labels(a: &DataMatrix, labels: &[usize], k: usize) -> Result<Self> {
        let centers = cluster_means(a, labels, k)?
            .into_iter()
            .enumerate()
            .map(|(r, m)| m.ok_or(KfedError::EmptyCluster(r)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels.to_vec(), DataMatrix::from_rows(&centers)?)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }

    /// Row indices of each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            m[c].push(i);
        }
        m
    }
}

/// Per-cluster means of the labelled rows; `None` for empty clusters.
pub fn cluster_means(a: &DataMatrix, labels: &[usize], k: usize) -> Result<Vec<Option<Vec<f64>>>> {
    if labels.len() != a.nrows() {
        return Err(KfedError::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            a.nrows()
        )));
    }
    let d = a.ncols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, &c) in a.rows().zip(labels) {
        if c >= k {
            return Err(KfedError::InvalidParameter(format!(
                "label {c} outside 0..{k}"
            )));
        }
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(row) {
            *s += x;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|x| x / n as f64).collect()))
        .collect())
}

/// Output of the local solve on one device.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    /// Final assignment of device rows (the `U_r`); its centers are the
    /// returned `θ_r`.
    pub clusters: Clustering,
    /// Rows that fell in no threshold set.
    pub unassigned_after_threshold: usize,
    pub lloyd_iterations: usize,
}

impl LocalResult {
    pub fn centers(&self) -> &DataMatrix {
        &self.clusters.centers
    }
}

/// Result of [`lloyd_iterate`] with the cost after each mean update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LloydTrace {
    pub costs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub clustering: Clustering,
    pub trace: LloydTrace,
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(point: &[f64], centers: &DataMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.rows().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's heuristic from the given initial centers.
///
/// Each step assigns rows to their nearest center and moves every center to
/// the mean of its rows. Empty clusters keep their previous center. Stops once
/// no center moves by `tol` or more, or after `max_iter` steps; the returned
/// centers are always the means of the returned assignment (or the retained
/// center for an empty cluster).
pub fn lloyd_iterate(a: &DataMatrix, init: &DataMatrix, tol: f64, max_iter: usize) -> Result<LloydRun> {
    if init.ncols() != a.ncols() {
        return Err(KfedError::Shape(format!(
            "centers have {} columns, data has {}",
            init.ncols(),
            a.ncols()
        )));
    }
    let k = init.nrows();
    let d = a.ncols();
    let mut centers = init.clone();
    let mut assignment = vec![0usize; a.nrows()];
    let mut costs = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter.max(1) {
        iterations += 1;
        for (slot, row) in assignment.iter_mut().zip(a.rows()) {
            *slot = nearest(row, &centers).0;
        }
        let means = cluster_means(a, &assignment, k)?;
        let mut values = Vec::with_capacity(k * d);
        let mut shift: f64 = 0.0;
        for (r, m) in means.into_iter().enumerate() {
            let old = centers.row(r);
            let new = m.unwrap_or_else(|| old.to_vec());
            shift = shift.max(squared_distance(old, &new).sqrt());
            values.extend(new);
        }
        centers = DataMatrix::new(k, d, values)?;
        costs.push(assignment_cost(a, &assignment, &centers));
        if shift < tol {
            converged = true;
            break;
        }
    }
    Ok(LloydRun {
        clustering: Clustering::new(assignment, centers)?,
        trace: LloydTrace {
            costs,
            iterations,
            converged,
        },
    })
}

/// `Σ_i ‖A_i − center(i)‖²` for a fixed assignment.
pub fn assignment_cost(a: &DataMatrix, assignment: &[usize], centers: &DataMatrix) -> f64 {
    a.rows()
        .zip(assignment)
        .map(|(row, &c)| squared_distance(row, centers.row(c)))
        .sum()
}

fn nearest_cost(a: &DataMatrix, centers: &DataMatrix) -> f64 {
    a.rows().map(|r| nearest(r, centers).1).sum()
}

/// D² (k-means++) sampling of `k` rows of `a`.
fn plus_plus<R: Rng>(a: &DataMatrix, k: usize, rng: &mut R) -> Result<DataMatrix> {
    let n = a.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = a
        .rows()
        .map(|r| squared_distance(r, a.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return Err(KfedError::InsufficientDistinct {
                needed: k,
                found: chosen.len(),
            });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in dist.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total weight");
        chosen.push(pick);
        for (slot, r) in dist.iter_mut().zip(a.rows()) {
            *slot = slot.min(squared_distance(r, a.row(pick)));
        }
    }
    a.select_rows(&chosen)
}

/// Constant-factor seeding on the projected rows: k-means++ followed by
/// Lloyd, best of [`SEED_RESTARTS`] seeded restarts.
pub fn approx_seed(projected: &ProjectedMatrix, k: usize, seed: u64) -> Result<DataMatrix> {
    let a = &projected.values;
    if k == 0 {
        return Err(KfedError::InvalidParameter("k must be at least 1".into()));
    }
    let distinct = a.distinct_rows();
    if distinct < k {
        return Err(KfedError::InsufficientDistinct {
            needed: k,
            found: distinct,
        });
    }
    let mut best: Option<(f64, DataMatrix)> = None;
    for restart in 0..SEED_RESTARTS {
        let mut rng = rng::stream(seed, restart as u64);
        let init = plus_plus(a, k, &mut rng)?;
        let run = lloyd_iterate(a, &init, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let cost = nearest_cost(a, &run.clustering.centers);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, run.clustering.centers));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Threshold sets from the projected rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSets {
    pub sets: Vec<Vec<usize>>,
    /// `μ(S_r)` over the unprojected rows, or `ν_r` when `S_r` is empty.
    pub centers: DataMatrix,
}

impl ThresholdSets {
    pub fn unassigned(&self, n: usize) -> usize {
        n - self.sets.iter().map(Vec::len).sum::<usize>()
    }
}

/// Row `i` joins `S_r` when `‖Â_i − ν_r‖ ≤ ⅓‖Â_i − ν_s‖` for every `s ≠ r`.
pub fn threshold_assign(projected: &ProjectedMatrix, nu: &DataMatrix) -> Result<ThresholdSets> {
    let a_hat = &projected.values;
    if nu.ncols() != a_hat.ncols() {
        return Err(KfedError::Shape("centers and data differ in dimension".into()));
    }
    let k = nu.nrows();
    let mut sets = vec![Vec::new(); k];
    for (i, row) in a_hat.rows().enumerate() {
        let dists: Vec<f64> = nu.rows().map(|c| squared_distance(row, c).sqrt()).collect();
        // Only the nearest center can satisfy the ratio against all others.
        let (r, _) = nearest(row, nu);
        let ok = dists
            .iter()
            .enumerate()
            .all(|(s, &ds)| s == r || dists[r] <= ds / 3.0);
        if ok {
            sets[r].push(i);
        }
    }
    let base = &projected.base;
    let mut values = Vec::with_capacity(k * base.ncols());
    for (r, set) in sets.iter().enumerate() {
        if set.is_empty() {
            values.extend_from_slice(nu.row(r));
        } else {
            let mut mean = vec![0.0; base.ncols()];
            for &i in set {
                for (m, x) in mean.iter_mut().zip(base.row(i)) {
                    *m += x;
                }
            }
            values.extend(mean.into_iter().map(|m| m / set.len() as f64));
        }
    }
    Ok(ThresholdSets {
        sets,
        centers: DataMatrix::new(k, base.ncols(), values)?,
    })
}

/// Full local pipeline for one device with `k_z` clusters.
///
/// The projection rank is clamped to `min(n, d)`; at that rank the projection
/// is the identity.
pub fn local_cluster(a: &DataMatrix, k_z: usize, seed: u64, tol: f64) -> Result<LocalResult> {
    local_cluster_with(a, k_z, seed, tol, DEFAULT_MAX_ITER)
}

pub fn local_cluster_with(
    a: &DataMatrix,
    k_z: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<LocalResult> {
    if k_z == 0 {
        return Err(KfedError::InvalidParameter("k_z must be at least 1".into()));
    }
    let rank = k_z.min(a.nrows()).min(a.ncols());
    let projected = linalg::top_k_projection(a, rank)?;
    let nu = approx_seed(&projected, k_z, seed)?;
    let thresholded = threshold_assign(&projected, &nu)?;
    let run = lloyd_iterate(a, &thresholded.centers, tol, max_iter)?;
    Ok(LocalResult {
        unassigned_after_threshold: thresholded.unassigned(a.nrows()),
        lloyd_iterations: run.trace.iterations,
        clusters: run.clustering,
    })
}
