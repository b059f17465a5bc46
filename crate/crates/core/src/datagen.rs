//! Synthetic instances: spherical Gaussian mixtures with planted labels, and
//! structured or IID device partitions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KfedError, Result};
use crate::federation::DevicePartition;
use crate::linalg::DataMatrix;
use crate::local::Clustering;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanPlacement {
    /// One mean per component.
    Explicit(Vec<Vec<f64>>),
    /// Equidistant means on scaled coordinate axes (needs `k ≤ d`).
    ///
    /// The pairwise distance is `c · √(k·m0) · σ_max / √w_min` times
    /// `factor`. When `factor` is unset it defaults to
    /// `8 · (1 + √(d/n))`, which puts every within-group pair of a
    /// structured partition with `k' ≤ √k` at about twice the active
    /// separation threshold.
    Auto {
        c: f64,
        m0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        factor: Option<f64>,
    },
    /// Coordinate-axis placement with a given pairwise distance (needs
    /// `k ≤ d`).
    Equidistant { distance: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Component sizes are `round(w_r · n)` (largest remainder).
    #[default]
    Exact,
    /// Each row's component is drawn from the weights.
    Multinomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub k: usize,
    pub d: usize,
    pub sigma_max: f64,
    /// Mixing weights; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub means: MeanPlacement,
    pub n: usize,
    #[serde(default)]
    pub sampling: Sampling,
    pub seed: u64,
}

impl MixtureSpec {
    /// Uniform weights, auto-placed means, `per_cluster` rows per component.
    pub fn uniform_auto(k: usize, d: usize, per_cluster: usize, c: f64, m0: f64, seed: u64) -> Self {
        Self {
            k,
            d,
            sigma_max: 1.0,
            weights: None,
            means: MeanPlacement::Auto { c, m0, factor: None },
            n: k * per_cluster,
            sampling: Sampling::Exact,
            seed,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.k as f64; self.k])
    }

    pub fn w_min(&self) -> f64 {
        self.weights().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 {
            return Err(KfedError::InvalidParameter("k and d must be positive".into()));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max >= 0.0) {
            return Err(KfedError::InvalidParameter(format!(
                "sigma_max must be finite and non-negative, got {}",
                self.sigma_max
            )));
        }
        let w = self.weights();
        if w.len() != self.k {
            return Err(KfedError::InvalidParameter(format!(
                "{} weights for k = {}",
                w.len(),
                self.k
            )));
        }
        if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(KfedError::InvalidParameter("weights must be positive".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(KfedError::InvalidParameter(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        match &self.means {
            MeanPlacement::Explicit(m) => {
                if m.len() != self.k || m.iter().any(|r| r.len() != self.d) {
                    return Err(KfedError::InvalidParameter(format!(
                        "explicit means must be {} points in R^{}",
                        self.k, self.d
                    )));
                }
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(KfedError::InvalidParameter("explicit means must be finite".into()));
                }
            }
            MeanPlacement::Equidistant { distance } => {
                if self.k > self.d {
                    return Err(KfedError::InvalidParameter(format!(
                        "equidistant mean placement needs k <= d (k = {}, d = {})",
                        self.k, self.d
                    )));
                }
                if !(distance.is_finite() && *distance >= 0.0) {
                    return Err(KfedError::InvalidParameter(format!(
                        "distance must be finite and non-negative, got {distance}"
                    )));
                }
            }
            MeanPlacement::Auto { c, m0, factor } => {
                if self.k > self.d {
                    return Err(KfedError::InvalidParameter(format!(
                        "auto mean placement needs k <= d (k = {}, d = {})",
                        self.k, self.d
                    )));
                }
                if !(c.is_finite() && *c >= 0.0 && m0.is_finite() && *m0 >= 1.0) {
                    return Err(KfedError::InvalidParameter(format!(
                        "auto placement needs c >= 0 and m0 >= 1 (c = {c}, m0 = {m0})"
                    )));
                }
                if factor.is_some_and(|f| !(f.is_finite() && f > 0.0)) {
                    return Err(KfedError::InvalidParameter("factor must be positive".into()));
                }
            }
        }
        if self.n < self.k {
            return Err(KfedError::TooFewSamples { n: self.n, k: self.k });
        }
        Ok(())
    }

    /// `c · √(k·m0) · σ_max / √w_min` for auto placement.
    pub fn requested_distance(&self) -> Option<f64> {
        match &self.means {
            MeanPlacement::Auto { c, m0, .. } => {
                Some(c * (self.k as f64 * m0).sqrt() * self.sigma_max / self.w_min().sqrt())
            }
            _ => None,
        }
    }

    /// Pairwise distance of axis-placed means.
    pub fn auto_distance(&self) -> Option<f64> {
        if let MeanPlacement::Equidistant { distance } = self.means {
            return Some(distance);
        }
        let base = self.requested_distance()?;
        let factor = match &self.means {
            MeanPlacement::Auto { factor: Some(f), .. } => *f,
            _ => 8.0 * (1.0 + (self.d as f64 / self.n as f64).sqrt()),
        };
        Some(base * factor)
    }

    pub fn component_means(&self) -> Vec<Vec<f64>> {
        match &self.means {
            MeanPlacement::Explicit(m) => m.clone(),
            MeanPlacement::Auto { .. } | MeanPlacement::Equidistant { .. } => {
                let side = self.auto_distance().unwrap_or(0.0) / std::f64::consts::SQRT_2;
                (0..self.k)
                    .map(|r| {
                        let mut v = vec![0.0; self.d];
                        if self.k > 1 {
                            v[r] = side;
                        }
                        v
                    })
                    .collect()
            }
        }
    }

    /// Exact component sizes by largest remainder.
    fn exact_sizes(&self) -> Vec<usize> {
        let w = self.weights();
        let raw: Vec<f64> = w.iter().map(|x| x * self.n as f64).collect();
        let mut sizes: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
        let mut left = self.n - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &r in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[r] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Box–Muller standard normal pair.
fn gaussian_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    // (0, 1] keeps ln finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// Samples the mixture. Component `r` draws its noise from its own seeded
/// stream, so output is identical for identical specs.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<(DataMatrix, Clustering)> {
    spec.validate()?;
    let (k, d, n) = (spec.k, spec.d, spec.n);
    let labels: Vec<usize> = match spec.sampling {
        Sampling::Exact => spec
            .exact_sizes()
            .into_iter()
            .enumerate()
            .flat_map(|(r, s)| std::iter::repeat_n(r, s))
            .collect(),
        Sampling::Multinomial => {
            let w = spec.weights();
            let mut rng = rng::stream(spec.seed, k as u64);
            (0..n)
                .map(|_| {
                    let u = rng.random::<f64>();
                    let mut acc = 0.0;
                    for (r, &x) in w.iter().enumerate() {
                        acc += x;
                        if u < acc {
                            return r;
                        }
                    }
                    k - 1
                })
                .collect()
        }
    };
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return Err(KfedError::TooFewSamples { n, k });
    }

    let means = spec.component_means();
    let mut streams: Vec<_> = (0..k).map(|r| rng::stream(spec.seed, r as u64)).collect();
    let mut values = Vec::with_capacity(n * d);
    for &r in &labels {
        let rng = &mut streams[r];
        let mut j = 0;
        while j < d {
            let (g0, g1) = gaussian_pair(rng);
            values.push(means[r][j] + spec.sigma_max * g0);
            if j + 1 < d {
                values.push(means[r][j + 1] + spec.sigma_max * g1);
            }
            j += 2;
        }
    }
    let a = DataMatrix::new(n, d, values)?;
    let truth = Clustering::from_labels(&a, &labels, k)?;
    Ok((a, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    /// Components are grouped in blocks of `group_size`; each block's rows
    /// are split evenly over `m0` devices.
    Structured { group_size: usize, m0: f64 },
    /// Rows are scattered uniformly over `devices` devices.
    Iid { devices: usize },
}

impl PartitionSpec {
    pub fn build(&self, truth: &Clustering, seed: u64) -> Result<DevicePartition> {
        match *self {
            PartitionSpec::Structured { group_size, m0 } => structured_partition(truth, group_size, m0),
            PartitionSpec::Iid { devices } => iid_partition(truth, devices, seed),
        }
    }
}

/// Component groups `[g·size, min((g+1)·size, k))`; the last group is short
/// when `group_size` does not divide `k`.
pub fn component_groups(k: usize, group_size: usize) -> Vec<Vec<usize>> {
    (0..k)
        .collect::<Vec<_>>()
        .chunks(group_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Splits each component group over `⌊m0⌋` devices. Device `g·⌊m0⌋ + j`
/// receives the `j`-th contiguous share of every component in group `g`, so
/// each non-empty per-device subset holds at least `⌊n_r/m0⌋` rows.
pub fn structured_partition(truth: &Clustering, group_size: usize, m0: f64) -> Result<DevicePartition> {
    if group_size == 0 {
        return Err(KfedError::InvalidParameter("group_size must be positive".into()));
    }
    if !(m0.is_finite() && m0 >= 1.0) {
        return Err(KfedError::InvalidParameter(format!("m0 must be >= 1, got {m0}")));
    }
    let per_group = m0.floor() as usize;
    let members = truth.members();
    let groups = component_groups(truth.k, group_size);
    let mut device_rows = vec![Vec::new(); groups.len() * per_group];
    for (g, comps) in groups.iter().enumerate() {
        for &r in comps {
            let rows = &members[r];
            let n_r = rows.len();
            if n_r < per_group {
                return Err(KfedError::Partition(format!(
                    "cluster {r} has {n_r} rows, too few for {per_group} devices"
                )));
            }
            for j in 0..per_group {
                let lo = j * n_r / per_group;
                let hi = (j + 1) * n_r / per_group;
                device_rows[g * per_group + j].extend_from_slice(&rows[lo..hi]);
            }
        }
    }
    for rows in &mut device_rows {
        rows.sort_unstable();
    }
    DevicePartition::from_labels(device_rows, &truth.assignment, truth.k, Some(m0))
}

/// Uniform random device for each row, redrawn until no device is empty.
pub fn iid_device_rows(n: usize, devices: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if devices == 0 || n < devices {
        return Err(KfedError::InvalidParameter(format!(
            "cannot spread {n} rows over {devices} non-empty devices"
        )));
    }
    for attempt in 0.. {
        let mut rng = rng::stream(rng::mix(seed, 0x11d), attempt);
        let mut rows = vec![Vec::new(); devices];
        for i in 0..n {
            rows[rng.random_range(0..devices)].push(i);
        }
        if rows.iter().all(|r| !r.is_empty()) {
            return Ok(rows);
        }
    }
    unreachable!()
}

/// IID partition with `k^(z)` and `m0` derived from the labels.
pub fn iid_partition(truth: &Clustering, devices: usize, seed: u64) -> Result<DevicePartition> {
    let rows = iid_device_rows(truth.len(), devices, seed)?;
    DevicePartition::from_labels(rows, &truth.assignment, truth.k, None)
}
