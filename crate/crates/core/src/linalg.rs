//! Dense matrix primitives: operator and Frobenius norms and projection onto
//! the top-`k` right singular subspace.
//!
//! Singular subspaces come from the smaller Gram matrix (`MᵀM` or `MMᵀ`).
//! Up to [`DENSE_EIGEN_LIMIT`] it is diagonalized directly; beyond that, block
//! subspace iteration with a Rayleigh–Ritz step per iteration is used, with
//! start vectors from a fixed internal seed. Both paths are bit-reproducible.

use rand::Rng;

use crate::error::{KfedError, Result};
use crate::rng;

/// Maximum subspace iterations before giving up on convergence.
pub const MAX_SUBSPACE_ITERS: usize = 10_000;
/// Convergence threshold on the change of the top-`k` subspace between
/// iterations (Frobenius norm of the sine matrix).
pub const SUBSPACE_TOL: f64 = 1e-10;

const RESIDUAL_TOL: f64 = 1e-13;
/// Gram matrices up to this size are diagonalized directly.
pub const DENSE_EIGEN_LIMIT: usize = 1024;
const OVERSAMPLE: usize = 8;
const START_SEED: u64 = 0x6b66_6564_5f73_7664;
// Ritz values this far below the top one are treated as null directions.
const NULL_REL: f64 = 1e-20;

/// An `n × d` row-major matrix of finite values. Each row is one data point.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(KfedError::EmptyMatrix);
        }
        if values.len() != rows * cols {
            return Err(KfedError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(KfedError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(KfedError::EmptyMatrix)?;
        let cols = first.as_ref().len();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(KfedError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// The sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(KfedError::EmptyMatrix);
        }
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(KfedError::Shape(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: idx.len(),
            cols: self.cols,
            values,
        })
    }

    pub fn sub(&self, other: &DataMatrix) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(KfedError::Shape(format!(
                "{}x{} minus {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.values.iter().map(|v| v * alpha).collect(),
        )
    }

    /// Adds `shift` to every row.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.cols {
            return Err(KfedError::Shape(format!(
                "shift of length {} for {} columns",
                shift.len(),
                self.cols
            )));
        }
        let values = self
            .values
            .chunks_exact(self.cols)
            .flat_map(|r| r.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Self::new(self.rows, self.cols, values)
    }

    /// Number of pairwise distinct rows (bitwise comparison).
    pub fn distinct_rows(&self) -> usize {
        let mut keys: Vec<Vec<u64>> = self
            .rows()
            .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }
}

/// A matrix projected onto the span of its top `rank` right singular vectors.
#[derive(Debug, Clone)]
pub struct ProjectedMatrix {
    pub base: DataMatrix,
    pub rank: usize,
    pub values: DataMatrix,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn frobenius_norm(m: &DataMatrix) -> f64 {
    m.values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value of `m`.
pub fn operator_norm(m: &DataMatrix) -> f64 {
    let (p, g, _) = gram(m);
    let eig = top_eigenspace(p, &g, 1);
    eig.values[0].max(0.0).sqrt()
}

/// Projects the rows of `m` onto the span of its top `k` right singular
/// vectors. `k = min(n, d)` returns `m` unchanged.
pub fn top_k_projection(m: &DataMatrix, k: usize) -> Result<ProjectedMatrix> {
    let full = m.rows.min(m.cols);
    if k == 0 || k > full {
        return Err(KfedError::InvalidParameter(format!(
            "projection rank {k} outside 1..={full}"
        )));
    }
    if k == full {
        return Ok(ProjectedMatrix {
            base: m.clone(),
            rank: k,
            values: m.clone(),
        });
    }
    let (p, g, side) = gram(m);
    let eig = top_eigenspace(p, &g, k);
    let (n, d) = (m.rows, m.cols);
    let mut out = vec![0.0; n * d];
    match side {
        GramSide::Columns => {
            // Â_i = Σ_j (M_i · v_j) v_j
            for (i, row) in m.rows().enumerate() {
                let dst = &mut out[i * d..(i + 1) * d];
                for v in &eig.vectors {
                    let coef = dot(row, v);
                    for (o, x) in dst.iter_mut().zip(v) {
                        *o += coef * x;
                    }
                }
            }
        }
        GramSide::Rows => {
            // Â = U_k (U_kᵀ M)
            for u in &eig.vectors {
                let mut b = vec![0.0; d];
                for (i, row) in m.rows().enumerate() {
                    if u[i] != 0.0 {
                        for (bj, x) in b.iter_mut().zip(row) {
                            *bj += u[i] * x;
                        }
                    }
                }
                for i in 0..n {
                    let dst = &mut out[i * d..(i + 1) * d];
                    for (o, x) in dst.iter_mut().zip(&b) {
                        *o += u[i] * x;
                    }
                }
            }
        }
    }
    Ok(ProjectedMatrix {
        base: m.clone(),
        rank: k,
        values: DataMatrix::new(n, d, out)?,
    })
}

#[derive(Clone, Copy)]
enum GramSide {
    /// `MᵀM`, `d × d`
    Columns,
    /// `MMᵀ`, `n × n`
    Rows,
}

fn gram(m: &DataMatrix) -> (usize, Vec<f64>, GramSide) {
    let (n, d) = (m.rows, m.cols);
    if n >= d {
        let mut g = vec![0.0; d * d];
        for row in m.rows() {
            for a in 0..d {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                let ga = &mut g[a * d..(a + 1) * d];
                for b in a..d {
                    ga[b] += ra * row[b];
                }
            }
        }
        symmetrize(d, &mut g);
        (d, g, GramSide::Columns)
    } else {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                g[i * n + j] = dot(m.row(i), m.row(j));
            }
        }
        symmetrize(n, &mut g);
        (n, g, GramSide::Rows)
    }
}

fn symmetrize(p: usize, g: &mut [f64]) {
    for a in 0..p {
        for b in 0..a {
            g[a * p + b] = g[b * p + a];
        }
    }
}

struct Eigen {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

fn sym_mul(p: usize, g: &[f64], v: &[f64]) -> Vec<f64> {
    (0..p).map(|a| dot(&g[a * p..(a + 1) * p], v)).collect()
}

/// Top-`k` eigenpairs of the `p × p` symmetric PSD matrix `g`.
fn top_eigenspace(p: usize, g: &[f64], k: usize) -> Eigen {
    if p <= DENSE_EIGEN_LIMIT {
        dense_top_eigenspace(p, g, k)
    } else {
        subspace_iteration(p, g, k)
    }
}

/// Full symmetric eigendecomposition. Exact up to rounding, including when
/// the leading eigenvalues are nearly equal, which is the usual case for
/// well-separated mixtures and where subspace iteration stalls.
fn dense_top_eigenspace(p: usize, g: &[f64], k: usize) -> Eigen {
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(p, p, g));
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(k);
    Eigen {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect(),
    }
}

/// Block subspace iteration with Rayleigh–Ritz, for Gram matrices too large
/// to diagonalize directly.
fn subspace_iteration(p: usize, g: &[f64], k: usize) -> Eigen {
    let s = (k + OVERSAMPLE).min(p);
    let mut rng = rng::stream(START_SEED, p as u64);
    let mut q: Vec<Vec<f64>> = (0..s)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    orthonormalize(&mut q, &mut rng);
    let mut w: Vec<Vec<f64>> = q.iter().map(|c| sym_mul(p, g, c)).collect();
    let mut prev: Option<Vec<Vec<f64>>> = None;

    for _ in 0..MAX_SUBSPACE_ITERS {
        // Rayleigh–Ritz on span(Q).
        let mut h = vec![0.0; s * s];
        for a in 0..s {
            for b in a..s {
                let v = 0.5 * (dot(&q[a], &w[b]) + dot(&q[b], &w[a]));
                h[a * s + b] = v;
                h[b * s + a] = v;
            }
        }
        let (theta, rot) = jacobi_eigen(s, &h);
        let ritz = rotate(&q, &rot, s);
        let g_ritz = rotate(&w, &rot, s);

        let top = theta[0].max(0.0);
        let residual = (0..k)
            .map(|i| {
                g_ritz[i]
                    .iter()
                    .zip(&ritz[i])
                    .map(|(gv, v)| (gv - theta[i] * v).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        let converged_residual = residual <= RESIDUAL_TOL * top;
        let converged_angle = prev
            .as_ref()
            .map(|old| subspace_change(old, &ritz[..k], &theta, top) < SUBSPACE_TOL)
            .unwrap_or(false);
        if converged_residual || converged_angle {
            return Eigen {
                values: theta[..k].to_vec(),
                vectors: ritz.into_iter().take(k).collect(),
            };
        }
        prev = Some(ritz[..k].to_vec());

        q = g_ritz;
        orthonormalize(&mut q, &mut rng);
        w = q.iter().map(|c| sym_mul(p, g, c)).collect();
    }
    log::warn!("subspace iteration hit {MAX_SUBSPACE_ITERS} iterations without converging");
    // Final Rayleigh–Ritz on whatever subspace we have.
    let mut h = vec![0.0; s * s];
    for a in 0..s {
        for b in 0..s {
            h[a * s + b] = dot(&q[a], &w[b]);
        }
    }
    symmetrize_avg(s, &mut h);
    let (theta, rot) = jacobi_eigen(s, &h);
    let ritz = rotate(&q, &rot, s);
    Eigen {
        values: theta[..k].to_vec(),
        vectors: ritz.into_iter().take(k).collect(),
    }
}

fn symmetrize_avg(s: usize, h: &mut [f64]) {
    for a in 0..s {
        for b in 0..a {
            let v = 0.5 * (h[a * s + b] + h[b * s + a]);
            h[a * s + b] = v;
            h[b * s + a] = v;
        }
    }
}

/// Frobenius norm of `(I - P_old) new_i` over the non-null new vectors.
fn subspace_change(old: &[Vec<f64>], new: &[Vec<f64>], theta: &[f64], top: f64) -> f64 {
    let mut total = 0.0;
    for (i, v) in new.iter().enumerate() {
        if theta[i] <= NULL_REL * top {
            continue;
        }
        let mut r = v.clone();
        for o in old {
            let c = dot(o, v);
            for (x, y) in r.iter_mut().zip(o) {
                *x -= c * y;
            }
        }
        total += dot(&r, &r);
    }
    total.sqrt()
}

/// Columns `Σ_b cols[b] * rot[b][j]` for each `j`.
fn rotate(cols: &[Vec<f64>], rot: &[f64], s: usize) -> Vec<Vec<f64>> {
    let p = cols[0].len();
    (0..s)
        .map(|j| {
            let mut out = vec![0.0; p];
            for (b, c) in cols.iter().enumerate() {
                let f = rot[b * s + j];
                if f != 0.0 {
                    for (o, x) in out.iter_mut().zip(c) {
                        *o += f * x;
                    }
                }
            }
            out
        })
        .collect()
}

/// Modified Gram–Schmidt with one reorthogonalization pass. Columns that
/// collapse are replaced by fresh random directions.
fn orthonormalize<R: Rng>(cols: &mut [Vec<f64>], rng: &mut R) {
    let p = cols[0].len();
    for j in 0..cols.len() {
        let mut attempts = 0;
        loop {
            let scale = dot(&cols[j], &cols[j]).sqrt();
            for _ in 0..2 {
                for i in 0..j {
                    let c = dot(&cols[i], &cols[j]);
                    let (head, tail) = cols.split_at_mut(j);
                    for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                        *x -= c * y;
                    }
                }
            }
            let norm = dot(&cols[j], &cols[j]).sqrt();
            if norm > 1e-12 * scale && norm > f64::MIN_POSITIVE {
                cols[j].iter_mut().for_each(|x| *x /= norm);
                break;
            }
            attempts += 1;
            if attempts > 64 {
                // p < number of columns cannot happen (s <= p); give up quietly.
                cols[j].iter_mut().for_each(|x| *x = 0.0);
                break;
            }
            cols[j] = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
    }
}

/// Cyclic Jacobi eigensolver for a small symmetric matrix. Returns
/// eigenvalues in descending order and the matching eigenvectors as the
/// columns of a row-major `s × s` matrix.
fn jacobi_eigen(s: usize, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = h.to_vec();
    let mut v = vec![0.0; s * s];
    for i in 0..s {
        v[i * s + i] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..s)
            .flat_map(|i| (0..s).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * s + j] * a[i * s + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm || off == 0.0 {
            break;
        }
        for pp in 0..s {
            for qq in pp + 1..s {
                let apq = a[pp * s + qq];
                if apq == 0.0 {
                    continue;
                }
                let app = a[pp * s + pp];
                let aqq = a[qq * s + qq];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for r in 0..s {
                    let arp = a[r * s + pp];
                    let arq = a[r * s + qq];
                    a[r * s + pp] = c * arp - sn * arq;
                    a[r * s + qq] = sn * arp + c * arq;
                }
                for r in 0..s {
                    let apr = a[pp * s + r];
                    let aqr = a[qq * s + r];
                    a[pp * s + r] = c * apr - sn * aqr;
                    a[qq * s + r] = sn * apr + c * aqr;
                }
                for r in 0..s {
                    let vrp = v[r * s + pp];
                    let vrq = v[r * s + qq];
                    v[r * s + pp] = c * vrp - sn * vrq;
                    v[r * s + qq] = sn * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&x, &y| a[y * s + y].total_cmp(&a[x * s + x]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| a[i * s + i]).collect();
    let mut vecs = vec![0.0; s * s];
    for (j, &src) in order.iter().enumerate() {
        for r in 0..s {
            vecs[r * s + j] = v[r * s + src];
        }
    }
    (values, vecs)
}
