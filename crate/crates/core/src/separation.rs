//! Separation quantities and bound audits for a labelled, partitioned data
//! set.
//!
//! All scales derive from `‖A − C‖_op`, where row `i` of `C` is the mean of
//! row `i`'s cluster:
//!
//! * `Δ̃_r = √k · ‖A−C‖ / √n_r`
//! * `Δ_r = k' · ‖A−C‖ / √n_r`
//! * `λ = √k' · ‖A−C‖ / √n_min`, with `n_min` the smallest device size
//!
//! The inactive requirement is checked in its scalar form,
//! `‖μ_r − μ_s‖ ≥ 10 √m0 · λ`. A per-cluster `λ_r` variant is sometimes
//! written for it but is never defined, so it is not used here.

use serde::{Deserialize, Serialize};

use crate::error::{KfedError, Result};
use crate::federation::{estimate_m0, DevicePartition};
use crate::linalg::{distance, dot, operator_norm, DataMatrix};
use crate::local::{cluster_means, Clustering};

pub const DEFAULT_C: f64 = 100.0;
pub const DEFAULT_AUDIT_SLACK: f64 = 1e-9;

/// Matrix whose row `i` is the mean of row `i`'s cluster.
pub fn build_center_matrix(a: &DataMatrix, labels: &[usize], k: usize) -> Result<DataMatrix> {
    let means = cluster_means(a, labels, k)?;
    let means: Vec<Vec<f64>> = means
        .into_iter()
        .enumerate()
        .map(|(r, m)| m.ok_or(KfedError::EmptyCluster(r)))
        .collect::<Result<_>>()?;
    let rows: Vec<&[f64]> = labels.iter().map(|&l| means[l].as_slice()).collect();
    DataMatrix::from_rows(&rows)
}

/// `‖A − C‖_op` for the given labels.
pub fn centered_norm(a: &DataMatrix, labels: &[usize], k: usize) -> Result<f64> {
    let c = build_center_matrix(a, labels, k)?;
    Ok(operator_norm(&a.sub(&c)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Active,
    Inactive,
}

impl PairStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PairStatus::Active => "active",
            PairStatus::Inactive => "inactive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub r: usize,
    pub s: usize,
    pub status: PairStatus,
    pub mean_distance: f64,
    /// `‖μ_r − μ_s‖ / (2√m0 (Δ_r + Δ_s))`
    pub ratio: f64,
    pub active_ok: bool,
    pub inactive_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub k: usize,
    pub k_prime: usize,
    pub c: f64,
    pub m0: f64,
    pub m0_estimated: bool,
    /// `‖A − C‖_op`
    pub op_norm: f64,
    pub cluster_sizes: Vec<usize>,
    pub tilde_delta: Vec<f64>,
    pub delta: Vec<f64>,
    /// λ with `n_min` = smallest device size.
    pub lambda: f64,
    /// λ with `n_min` = smallest cluster size.
    pub lambda_cluster_min: f64,
    pub n_min_device: usize,
    pub n_min_cluster: usize,
    pub n_max_cluster: usize,
    /// Upper-triangle pairs `r < s`.
    pub pairs: Vec<PairReport>,
    pub proximity_violations: usize,
}

impl SeparationReport {
    pub fn pair(&self, r: usize, s: usize) -> Option<&PairReport> {
        let (r, s) = if r < s { (r, s) } else { (s, r) };
        self.pairs.iter().find(|p| p.r == r && p.s == s)
    }

    /// Fraction of pairs with `c_rs > c0`.
    pub fn fraction_above(&self, c0: f64) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().filter(|p| p.ratio > c0).count() as f64 / self.pairs.len() as f64
    }

    /// Per-pair CSV rows `(r, s, status, ratio, active_ok, inactive_ok)`.
    pub fn write_pairs_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| KfedError::Parse(e.to_string());
        out.write_record(["r", "s", "status", "ratio", "active_ok", "inactive_ok"])
            .map_err(to_err)?;
        for p in &self.pairs {
            out.write_record([
                p.r.to_string(),
                p.s.to_string(),
                p.status.as_str().to_string(),
                p.ratio.to_string(),
                p.active_ok.to_string(),
                p.inactive_ok.to_string(),
            ])
            .map_err(to_err)?;
        }
        out.flush().map_err(|e| KfedError::Parse(e.to_string()))?;
        Ok(())
    }
}

/// Active iff some device holds rows of both clusters.
pub fn pair_statuses(partition: &DevicePartition, labels: &[usize], k: usize) -> Vec<Vec<PairStatus>> {
    let mut status = vec![vec![PairStatus::Inactive; k]; k];
    for rows in &partition.device_rows {
        let mut present = vec![false; k];
        for &i in rows {
            if let Some(&l) = labels.get(i) {
                if l < k {
                    present[l] = true;
                }
            }
        }
        let here: Vec<usize> = (0..k).filter(|&r| present[r]).collect();
        for &r in &here {
            for &s in &here {
                if r != s {
                    status[r][s] = PairStatus::Active;
                }
            }
        }
    }
    status
}

/// Computes every separation quantity for the labelled data. `m0 = None`
/// estimates it from the partition.
pub fn separation_quantities(
    a: &DataMatrix,
    truth: &Clustering,
    partition: &DevicePartition,
    c: f64,
    m0: Option<f64>,
) -> Result<SeparationReport> {
    let k = truth.k;
    let labels = &truth.assignment;
    if labels.len() != a.nrows() {
        return Err(KfedError::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            a.nrows()
        )));
    }
    let cm = build_center_matrix(a, labels, k)?;
    let op = operator_norm(&a.sub(&cm)?);
    let means: Vec<Vec<f64>> = cluster_means(a, labels, k)?
        .into_iter()
        .map(|m| m.expect("checked non-empty by build_center_matrix"))
        .collect();
    let sizes = truth.sizes();
    let k_prime = partition.k_prime().max(1);
    let (m0, m0_estimated) = match m0 {
        Some(m) => (m, false),
        None => (estimate_m0(&partition.device_rows, labels, k), true),
    };

    let tilde_delta: Vec<f64> = sizes
        .iter()
        .map(|&n| (k as f64).sqrt() * op / (n as f64).sqrt())
        .collect();
    let delta: Vec<f64> = sizes
        .iter()
        .map(|&n| k_prime as f64 * op / (n as f64).sqrt())
        .collect();
    let n_min_device = partition
        .device_rows
        .iter()
        .map(Vec::len)
        .filter(|&n| n > 0)
        .min()
        .unwrap_or(0);
    let n_min_cluster = sizes.iter().copied().min().unwrap_or(0);
    let n_max_cluster = sizes.iter().copied().max().unwrap_or(0);
    let lam = |n: usize| (k_prime as f64).sqrt() * op / (n as f64).sqrt();
    let lambda = lam(n_min_device);
    let lambda_cluster_min = lam(n_min_cluster);

    let status = pair_statuses(partition, labels, k);
    let sqrt_m0 = m0.sqrt();
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for r in 0..k {
        for s in r + 1..k {
            let dist = distance(&means[r], &means[s]);
            let scale = 2.0 * sqrt_m0 * (delta[r] + delta[s]);
            let ratio = if scale > 0.0 {
                dist / scale
            } else if dist > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            pairs.push(PairReport {
                r,
                s,
                status: status[r][s],
                mean_distance: dist,
                ratio,
                active_ok: dist > 0.0 && dist >= c * scale,
                inactive_ok: dist > 0.0 && dist >= 10.0 * sqrt_m0 * lambda,
            });
        }
    }
    let proximity = if k >= 2 {
        proximity_check(a, truth)?.bad.len()
    } else {
        0
    };
    Ok(SeparationReport {
        k,
        k_prime,
        c,
        m0,
        m0_estimated,
        op_norm: op,
        cluster_sizes: sizes,
        tilde_delta,
        delta,
        lambda,
        lambda_cluster_min,
        n_min_device,
        n_min_cluster,
        n_max_cluster,
        pairs,
        proximity_violations: proximity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    /// Rows failing the condition for at least one other cluster, ascending.
    pub bad: Vec<usize>,
    /// Pairs with coincident means, which were not checked.
    pub skipped_pairs: Vec<(usize, usize)>,
}

/// Proximity condition: a row of `T_s`, projected onto the line through
/// `μ_r` and `μ_s`, must be closer to `μ_s` by at least
/// `(1/√n_r + 1/√n_s) ‖A − C‖_op`, for every `r ≠ s`.
pub fn proximity_check(a: &DataMatrix, truth: &Clustering) -> Result<ProximityReport> {
    let k = truth.k;
    if k < 2 {
        return Err(KfedError::InvalidParameter("proximity check needs k >= 2".into()));
    }
    let labels = &truth.assignment;
    let op = centered_norm(a, labels, k)?;
    let means: Vec<Vec<f64>> = cluster_means(a, labels, k)?
        .into_iter()
        .map(|m| m.expect("non-empty"))
        .collect();
    let sizes = truth.sizes();
    let mut skipped = Vec::new();
    for r in 0..k {
        for s in r + 1..k {
            if means[r] == means[s] {
                log::warn!("clusters {r} and {s} have coincident means; pair skipped");
                skipped.push((r, s));
            }
        }
    }
    let mut bad = Vec::new();
    for (i, row) in a.rows().enumerate() {
        let s = labels[i];
        let failing = (0..k).filter(|&r| r != s).any(|r| {
            let key = if r < s { (r, s) } else { (s, r) };
            if skipped.contains(&key) {
                return false;
            }
            proximity_margin(row, &means[r], &means[s]) < proximity_threshold(op, sizes[r], sizes[s])
        });
        if failing {
            bad.push(i);
        }
    }
    Ok(ProximityReport {
        bad,
        skipped_pairs: skipped,
    })
}

/// `‖Ā − μ_r‖ − ‖Ā − μ_s‖` where `Ā` is `x` projected onto the line through
/// the two means.
pub fn proximity_margin(x: &[f64], mu_r: &[f64], mu_s: &[f64]) -> f64 {
    let dir: Vec<f64> = mu_r.iter().zip(mu_s).map(|(a, b)| a - b).collect();
    let len2 = dot(&dir, &dir);
    let rel: Vec<f64> = x.iter().zip(mu_s).map(|(a, b)| a - b).collect();
    let t = dot(&rel, &dir) / len2;
    let len = len2.sqrt();
    ((1.0 - t).abs() - t.abs()) * len
}

pub fn proximity_threshold(op: f64, n_r: usize, n_s: usize) -> f64 {
    (1.0 / (n_r as f64).sqrt() + 1.0 / (n_s as f64).sqrt()) * op
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `‖μ(T^z_r) − μ(T_r)‖ ≤ ‖A − C‖ / √n^z_r`
    MeanShift,
    /// `‖A^(z) − C^(z)‖ ≤ 2√k' ‖A − C‖`
    NormChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub kind: BoundKind,
    pub device: usize,
    /// Cluster for mean-shift checks.
    pub cluster: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub slack: f64,
    pub op_norm: f64,
    pub k_prime: usize,
    pub checks: Vec<BoundCheck>,
    pub violations: Vec<BoundCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluates the mean-shift and norm-change bounds on every device and every
/// cluster present on it.
pub fn lemma_audit(
    a: &DataMatrix,
    truth: &Clustering,
    partition: &DevicePartition,
    slack: f64,
) -> Result<AuditReport> {
    let k = truth.k;
    let labels = &truth.assignment;
    let op = centered_norm(a, labels, k)?;
    let global: Vec<Option<Vec<f64>>> = cluster_means(a, labels, k)?;
    let k_prime = partition.k_prime().max(1);
    let mut checks = Vec::new();
    for (z, rows) in partition.device_rows.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let local_a = a.select_rows(rows)?;
        let local_labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
        let local_means = cluster_means(&local_a, &local_labels, k)?;
        let mut counts = vec![0usize; k];
        for &l in &local_labels {
            counts[l] += 1;
        }
        for r in 0..k {
            if let (Some(lm), Some(gm)) = (&local_means[r], &global[r]) {
                checks.push(BoundCheck {
                    kind: BoundKind::MeanShift,
                    device: z,
                    cluster: Some(r),
                    lhs: distance(lm, gm),
                    rhs: op / (counts[r] as f64).sqrt(),
                });
            }
        }
        let local_c = local_center_matrix(&local_labels, &local_means, a.ncols())?;
        checks.push(BoundCheck {
            kind: BoundKind::NormChange,
            device: z,
            cluster: None,
            lhs: operator_norm(&local_a.sub(&local_c)?),
            rhs: 2.0 * (k_prime as f64).sqrt() * op,
        });
    }
    let violations = checks.iter().filter(|c| !c.holds(slack)).cloned().collect();
    Ok(AuditReport {
        slack,
        op_norm: op,
        k_prime,
        checks,
        violations,
    })
}

fn local_center_matrix(labels: &[usize], means: &[Option<Vec<f64>>], d: usize) -> Result<DataMatrix> {
    let mut values = Vec::with_capacity(labels.len() * d);
    for &l in labels {
        values.extend_from_slice(means[l].as_ref().expect("label present on device"));
    }
    DataMatrix::new(labels.len(), d, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DataMatrix {
        DataMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn center_matrix_single_cluster() {
        let a = mat(&[&[0.0, 2.0], &[2.0, 4.0], &[4.0, 0.0]]);
        let c = build_center_matrix(&a, &[0, 0, 0], 1).unwrap();
        for row in c.rows() {
            assert_eq!(row, &[2.0, 2.0]);
        }
    }

    #[test]
    fn center_matrix_singletons_is_identity_map() {
        let a = mat(&[&[1.0], &[5.0], &[-3.0]]);
        let c = build_center_matrix(&a, &[0, 1, 2], 3).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn center_matrix_hand_means() {
        let a = mat(&[&[0.0, 0.0], &[2.0, 0.0], &[10.0, 10.0], &[10.0, 12.0]]);
        let c = build_center_matrix(&a, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0, 1.0, 0.0, 10.0, 11.0, 10.0, 11.0]);
    }

    #[test]
    fn center_matrix_empty_cluster() {
        let a = mat(&[&[0.0], &[1.0]]);
        assert!(matches!(
            build_center_matrix(&a, &[0, 0], 2),
            Err(KfedError::EmptyCluster(1))
        ));
    }

    #[test]
    fn proximity_at_mean_and_midpoint() {
        // Two tight clusters far apart plus probe points.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for i in 0..10 {
            rows.push(vec![0.0, 0.01 * i as f64]);
        }
        for i in 0..10 {
            rows.push(vec![100.0, 0.01 * i as f64]);
        }
        let a = DataMatrix::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
        let truth = Clustering::from_labels(&a, &labels, 2).unwrap();
        let rep = proximity_check(&a, &truth).unwrap();
        assert!(rep.bad.is_empty());

        let mu_r = [0.0, 0.0];
        let mu_s = [100.0, 0.0];
        assert_eq!(proximity_margin(&mu_s, &mu_r, &mu_s), 100.0);
        assert_eq!(proximity_margin(&[50.0, 3.0], &mu_r, &mu_s), 0.0);
    }

    #[test]
    fn coincident_means_skipped() {
        let a = mat(&[&[1.0], &[-1.0], &[1.0], &[-1.0]]);
        let truth = Clustering::from_labels(&a, &[0, 0, 1, 1], 2).unwrap();
        let rep = proximity_check(&a, &truth).unwrap();
        assert_eq!(rep.skipped_pairs, vec![(0, 1)]);
        assert!(rep.bad.is_empty());
    }

    #[test]
    fn duplicate_clusters_have_zero_ratio() {
        let a = mat(&[&[1.0], &[-1.0], &[1.0], &[-1.0]]);
        let truth = Clustering::from_labels(&a, &[0, 0, 1, 1], 2).unwrap();
        let p = DevicePartition::from_labels(vec![vec![0, 1, 2, 3]], &truth.assignment, 2, None).unwrap();
        let rep = separation_quantities(&a, &truth, &p, DEFAULT_C, None).unwrap();
        let pair = rep.pair(0, 1).unwrap();
        assert_eq!(pair.ratio, 0.0);
        assert!(!pair.active_ok && !pair.inactive_ok);
    }

    #[test]
    fn pair_status_is_definitional() {
        let labels = [0, 0, 1, 1, 2, 2];
        let together = DevicePartition::from_labels(vec![vec![0, 1, 2, 3], vec![4, 5]], &labels, 3, None).unwrap();
        let st = pair_statuses(&together, &labels, 3);
        assert_eq!(st[0][1], PairStatus::Active);
        assert_eq!(st[0][2], PairStatus::Inactive);
        assert_eq!(st[1][2], PairStatus::Inactive);
    }

    #[test]
    fn one_device_has_zero_mean_shift() {
        let a = mat(&[&[0.0, 1.0], &[2.0, 1.0], &[7.0, 7.0], &[9.0, 8.0]]);
        let truth = Clustering::from_labels(&a, &[0, 0, 1, 1], 2).unwrap();
        let p = DevicePartition::from_labels(vec![vec![0, 1, 2, 3]], &truth.assignment, 2, None).unwrap();
        let audit = lemma_audit(&a, &truth, &p, 0.0).unwrap();
        assert!(audit.passed());
        for c in audit.checks.iter().filter(|c| c.kind == BoundKind::MeanShift) {
            assert_eq!(c.lhs, 0.0);
        }
    }
}
