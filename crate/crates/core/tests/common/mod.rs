//! Test-only oracles, written independently of the library code paths.

#![allow(dead_code)]

use kfed::datagen::{generate_mixture, structured_partition, MixtureSpec};
use kfed::federation::KfedRun;
use kfed::linalg::top_k_projection;
use kfed::local::{approx_seed, assignment_cost, lloyd_iterate, DEFAULT_MAX_ITER, DEFAULT_TOL};
use kfed::{Clustering, DataMatrix, DevicePartition};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(n: usize, d: usize, seed: u64) -> DataMatrix {
    let mut r = rng(seed);
    let v: Vec<f64> = (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect();
    DataMatrix::new(n, d, v).unwrap()
}

pub fn to_vecs(m: &DataMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).to_vec()).collect()
}

/// `MᵀM` as a dense `d × d` array.
pub fn gram(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = m[0].len();
    let mut g = vec![vec![0.0; d]; d];
    for row in m {
        for i in 0..d {
            for j in 0..d {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    g
}

/// Classical Jacobi (largest off-diagonal pivot). Returns eigenvalues in
/// descending order with matching eigenvectors as columns `v[.][j]`.
pub fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = a.len();
    let mut v = vec![vec![0.0; p]; p];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 * p * p {
        let (mut bi, mut bj, mut big) = (0, 0, 0.0);
        for i in 0..p {
            for j in i + 1..p {
                if a[i][j].abs() > big {
                    big = a[i][j].abs();
                    bi = i;
                    bj = j;
                }
            }
        }
        let scale: f64 = (0..p).map(|i| a[i][i].abs()).fold(0.0, f64::max);
        if big <= 1e-15 * scale.max(1e-300) {
            break;
        }
        let (i, j) = (bi, bj);
        let theta = (a[j][j] - a[i][i]) / (2.0 * a[i][j]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..p {
            let (aik, ajk) = (a[i][k], a[j][k]);
            a[i][k] = c * aik - s * ajk;
            a[j][k] = s * aik + c * ajk;
        }
        for k in 0..p {
            let (aki, akj) = (a[k][i], a[k][j]);
            a[k][i] = c * aki - s * akj;
            a[k][j] = s * aki + c * akj;
        }
        for row in v.iter_mut() {
            let (vi, vj) = (row[i], row[j]);
            row[i] = c * vi - s * vj;
            row[j] = s * vi + c * vj;
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..p).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (vals, vecs)
}

/// Singular values, descending, from the eigenvalues of `MᵀM`.
pub fn singular_values(m: &[Vec<f64>]) -> Vec<f64> {
    jacobi(gram(m)).0.into_iter().map(|x| x.max(0.0).sqrt()).collect()
}

pub fn op_norm_oracle(m: &[Vec<f64>]) -> f64 {
    singular_values(m)[0]
}

pub fn frob_oracle(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

/// Within-cluster sum of squares by the textbook double loop.
pub fn cost_double_loop(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let mut mean = vec![0.0; d];
        let mut count = 0.0;
        for (p, &l) in points.iter().zip(labels) {
            if l == c {
                for j in 0..d {
                    mean[j] += p[j];
                }
                count += 1.0;
            }
        }
        if count == 0.0 {
            continue;
        }
        for (p, &l) in points.iter().zip(labels) {
            if l == c {
                for j in 0..d {
                    let diff = p[j] - mean[j] / count;
                    total += diff * diff;
                }
            }
        }
    }
    total
}

/// Optimal k-means cost by enumerating every labelling.
pub fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(cost_double_loop(points, &labels, k));
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Best agreement over all label bijections of `0..k`.
pub fn brute_force_agreement(pred: &[usize], truth: &[usize], k: usize) -> usize {
    permutations(k)
        .iter()
        .map(|perm| pred.iter().zip(truth).filter(|(&p, &t)| perm[p] == t).count())
        .max()
        .unwrap()
}

/// Auto-placed mixture split over a structured partition.
pub fn planted(
    k: usize,
    d: usize,
    per_cluster: usize,
    group: usize,
    m0: f64,
    c: f64,
    seed: u64,
) -> (DataMatrix, Clustering, DevicePartition) {
    let spec = MixtureSpec::uniform_auto(k, d, per_cluster, c, m0, seed);
    let (a, truth) = generate_mixture(&spec).unwrap();
    let part = structured_partition(&truth, group, m0).unwrap();
    (a, truth, part)
}

/// Random data, random labels with every cluster present, random partition.
pub fn fuzz_instance(seed: u64) -> (DataMatrix, Clustering, DevicePartition) {
    let mut r = rng(seed);
    let k = r.random_range(1..=8);
    let n = r.random_range(k.max(6)..=500);
    let d = r.random_range(1..=12);
    let z = r.random_range(1..=6);
    let spread = 10f64.powi(r.random_range(-2..3));
    let mut values: Vec<f64> = (0..n * d).map(|_| r.random_range(-1.0..1.0) * spread).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
    labels.shuffle(&mut r);
    // Some clusters get shifted so the labelling is not pure noise.
    for (i, &l) in labels.iter().enumerate() {
        values[i * d] += l as f64 * spread * r.random_range(0.0..3.0);
    }
    let a = DataMatrix::new(n, d, values).unwrap();
    let truth = Clustering::from_labels(&a, &labels, k).unwrap();
    let mut rows = vec![Vec::new(); z];
    for i in 0..n {
        // Skewed device choice: device 0 is rare, giving tiny subsets.
        let dev = if r.random_bool(0.02) { 0 } else { r.random_range(0..z) };
        rows[dev].push(i);
    }
    let part = DevicePartition::from_labels(rows, &labels, k, None).unwrap();
    (a, truth, part)
}

pub fn random_rank_k(n: usize, d: usize, k: usize, r: &mut impl rand::Rng) -> DataMatrix {
    let u: Vec<f64> = (0..n * k).map(|_| r.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..k * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            out[i * d + j] = (0..k).map(|l| u[i * k + l] * v[l * d + j]).sum();
        }
    }
    DataMatrix::new(n, d, out).unwrap()
}

/// Planted cluster each device center stands for, by majority of its rows.
pub fn center_truth(run: &KfedRun, part: &DevicePartition, truth: &Clustering) -> Vec<Vec<usize>> {
    run.uploads
        .iter()
        .map(|u| {
            let rows = &part.device_rows[u.device_id];
            (0..u.k_z())
                .map(|s| {
                    let mut votes = vec![0usize; truth.k];
                    for (&i, &l) in rows.iter().zip(&u.local_assignment) {
                        if l == s {
                            votes[truth.assignment[i]] += 1;
                        }
                    }
                    (0..truth.k).max_by_key(|&r| (votes[r], usize::MAX - r)).unwrap()
                })
                .collect()
        })
        .collect()
}

pub fn seed_then_lloyd(a: &DataMatrix, k: usize, seed: u64) -> f64 {
    let rank = k.min(a.nrows()).min(a.ncols());
    let p = top_k_projection(a, rank).unwrap();
    let init = approx_seed(&p, k, seed).unwrap();
    let run = lloyd_iterate(a, &init, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assignment_cost(a, &run.clustering.assignment, &run.clustering.centers)
}
