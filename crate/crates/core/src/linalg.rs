//! Deterministic dense linear algebra.
//!
//! Everything here works on row-major `f64` matrices. Parallel kernels split
//! work by output row and accumulate each entry sequentially, so results are
//! bitwise identical regardless of the number of worker threads.

#![allow(clippy::needless_range_loop)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

/// Tolerance used when validating orthonormal bases.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("requested rank {k} exceeds the maximum {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("matrix shape {rows}x{cols} does not match {len} elements")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("subspace iteration did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("requested {d_out} output dimensions from {dim}-dimensional data")]
    DTooLarge { d_out: usize, dim: usize },
    #[error("basis vectors are not orthonormal (deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let n = other.cols;
        let mut out = Matrix::zeros(self.rows, n);
        if n == 0 {
            return Ok(out);
        }
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| {
                let a = self.row(i);
                for (l, &a_il) in a.iter().enumerate() {
                    if a_il == 0.0 {
                        continue;
                    }
                    let b = other.row(l);
                    for (o, &b_lj) in out_row.iter_mut().zip(b) {
                        *o += a_il * b_lj;
                    }
                }
            });
        Ok(out)
    }

    /// `selfᵀ * self`, a `cols x cols` symmetric matrix.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        if n == 0 {
            return g;
        }
        g.data.par_chunks_mut(n).enumerate().for_each(|(i, g_row)| {
            for x in self.row_iter() {
                let xi = x[i];
                if xi == 0.0 {
                    continue;
                }
                for j in i..n {
                    g_row[j] += xi * x[j];
                }
            }
        });
        mirror_upper(&mut g);
        g
    }

    /// `self * selfᵀ`, a `rows x rows` symmetric matrix.
    pub fn outer_gram(&self) -> Matrix {
        let n = self.rows;
        let mut g = Matrix::zeros(n, n);
        if n == 0 {
            return g;
        }
        g.data.par_chunks_mut(n).enumerate().for_each(|(i, g_row)| {
            let a = self.row(i);
            for j in i..n {
                g_row[j] = dot(a, self.row(j));
            }
        });
        mirror_upper(&mut g);
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        if self.rows == 0 {
            return mean;
        }
        for r in self.row_iter() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

fn mirror_upper(g: &mut Matrix) {
    let n = g.rows;
    for i in 0..n {
        for j in 0..i {
            g.data[i * n + j] = g.data[j * n + i];
        }
    }
}

/// Sequential inner product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A set of `k` mutually orthogonal unit vectors in `dim` dimensions, stored
/// as the rows of a `k x dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    vectors: Matrix,
}

impl OrthonormalBasis {
    /// Validates `vectors` (one basis vector per row) against [`ORTHONORMAL_TOL`].
    pub fn new(vectors: Matrix) -> Result<Self> {
        let deviation = orthonormality_deviation(&vectors);
        if deviation > ORTHONORMAL_TOL {
            return Err(LinalgError::NotOrthonormal { deviation });
        }
        Ok(Self { vectors })
    }

    pub(crate) fn new_unchecked(vectors: Matrix) -> Self {
        Self { vectors }
    }

    /// First `k` standard basis vectors of `dim`-space.
    pub fn standard(dim: usize, k: usize) -> Self {
        let mut m = Matrix::zeros(k, dim);
        for i in 0..k.min(dim) {
            m.set(i, i, 1.0);
        }
        Self { vectors: m }
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn k(&self) -> usize {
        self.vectors.rows()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// Keeps only the first `k` vectors.
    pub fn truncate(&self, k: usize) -> Self {
        let k = k.min(self.k());
        let data = self.vectors.as_slice()[..k * self.dim()].to_vec();
        Self {
            vectors: Matrix::from_vec(k, self.dim(), data).expect("consistent shape"),
        }
    }

    /// Coordinates `⟨v, uᵢ⟩` of `v` along each basis vector.
    pub fn coefficients(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        Ok(self.vectors.row_iter().map(|u| dot(v, u)).collect())
    }

    /// Orthogonal projection of `v` onto the span.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let coeffs = self.coefficients(v)?;
        let mut out = vec![0.0; v.len()];
        for (c, u) in coeffs.iter().zip(self.vectors.row_iter()) {
            for (o, x) in out.iter_mut().zip(u) {
                *o += c * x;
            }
        }
        Ok(out)
    }

    /// The `dim x dim` projector `BᵀB`.
    pub fn projector(&self) -> Matrix {
        self.vectors.gram()
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(LinalgError::DimMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

/// Largest deviation of `B·Bᵀ` from the identity.
pub fn orthonormality_deviation(vectors: &Matrix) -> f64 {
    let g = vectors.outer_gram();
    let mut worst: f64 = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst
}

/// Removes the component of `v` lying in the span of `basis`:
/// `v - Σ ⟨v, uᵢ⟩ uᵢ`.
pub fn project_out(v: &[f64], basis: &OrthonormalBasis) -> Result<Vec<f64>> {
    let coeffs = basis.coefficients(v)?;
    let mut out = v.to_vec();
    for (c, u) in coeffs.iter().zip(basis.vectors.row_iter()) {
        for (o, x) in out.iter_mut().zip(u) {
            *o -= c * x;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    /// Convergence threshold on the Ritz residual, relative to the largest eigenvalue.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 1000,
            seed: DEFAULT_SVD_SEED,
        }
    }
}

/// Seed for the random starting block of subspace iteration.
pub const DEFAULT_SVD_SEED: u64 = 0x5eed_0f5d;

/// Top right-singular vectors and singular values of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    pub basis: OrthonormalBasis,
    pub singular_values: Vec<f64>,
    pub iterations: usize,
}

/// Top-`k` right-singular vectors of `m` (used as-is, no centering), ordered
/// by descending singular value.
///
/// Runs block subspace iteration with Rayleigh-Ritz on `MᵀM` when
/// `cols <= rows` and on `MMᵀ` otherwise. Each returned vector is signed so
/// that its entry of largest magnitude is non-negative.
pub fn truncated_svd(m: &Matrix, k: usize) -> Result<TruncatedSvd> {
    truncated_svd_with(m, k, &SvdOptions::default())
}

pub fn truncated_svd_with(m: &Matrix, k: usize, opts: &SvdOptions) -> Result<TruncatedSvd> {
    if k == 0 {
        return Err(LinalgError::ZeroRank);
    }
    let max = m.rows().min(m.cols());
    if k > max {
        return Err(LinalgError::KTooLarge { k, max });
    }
    top_right_singular(m, k, opts)
}

/// Like [`truncated_svd_with`] but allows `k` up to `cols`; directions beyond
/// the row count get zero singular values and an arbitrary (deterministic)
/// orthonormal completion.
pub(crate) fn top_right_singular(m: &Matrix, k: usize, opts: &SvdOptions) -> Result<TruncatedSvd> {
    let dim = m.cols();
    if k > dim {
        return Err(LinalgError::KTooLarge { k, max: dim });
    }
    if k == 0 {
        return Err(LinalgError::ZeroRank);
    }

    let (mut vectors, mut values, iterations) = if dim <= m.rows() {
        let g = m.gram();
        let eig = symmetric_top_eigen(&g, k, opts)?;
        (eig.vectors, eig.values, eig.iterations)
    } else {
        let g = m.outer_gram();
        let kk = k.min(m.rows());
        let (mut vectors, values, iterations) = if kk == 0 {
            (Matrix::zeros(0, dim), Vec::new(), 0)
        } else {
            let eig = symmetric_top_eigen(&g, kk, opts)?;
            // v = Mᵀu / σ
            let top = eig.values.first().copied().unwrap_or(0.0).max(0.0).sqrt();
            let mut vs = Matrix::zeros(kk, dim);
            let mut kept = 0;
            for i in 0..kk {
                let sigma = eig.values[i].max(0.0).sqrt();
                if sigma <= 1e-12 * top || sigma == 0.0 {
                    break;
                }
                let u = eig.vectors.row(i);
                let v = vs.row_mut(i);
                for (r, &ur) in u.iter().enumerate() {
                    for (vj, mj) in v.iter_mut().zip(m.row(r)) {
                        *vj += ur * mj;
                    }
                }
                v.iter_mut().for_each(|x| *x /= sigma);
                kept += 1;
            }
            let data = vs.as_slice()[..kept * dim].to_vec();
            let vectors = Matrix::from_vec(kept, dim, data).expect("consistent shape");
            (vectors, eig.values[..kept].to_vec(), eig.iterations)
        };
        // re-orthonormalize for accuracy, then complete with zero singular values
        let rows: Vec<Vec<f64>> = vectors.row_iter().map(<[f64]>::to_vec).collect();
        let mut completed = orthonormalize_rows(rows, dim);
        let mut vals = values;
        while completed.len() < k {
            completed.push(next_standard_complement(&completed, dim));
            vals.push(0.0);
        }
        completed.truncate(k);
        vectors = Matrix::from_rows(&completed);
        (vectors, vals, iterations)
    };

    values.truncate(k);
    let singular_values = values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    for i in 0..vectors.rows() {
        canonical_sign(vectors.row_mut(i));
    }
    Ok(TruncatedSvd {
        basis: OrthonormalBasis::new_unchecked(vectors),
        singular_values,
        iterations,
    })
}

/// Flips `v` so that its entry of largest magnitude (first on ties) is non-negative.
pub(crate) fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

struct TopEigen {
    /// `k x n`, one eigenvector per row.
    vectors: Matrix,
    values: Vec<f64>,
    iterations: usize,
}

/// Top-`k` eigenpairs of a symmetric positive semi-definite matrix by block
/// subspace iteration with Rayleigh-Ritz extraction.
fn symmetric_top_eigen(g: &Matrix, k: usize, opts: &SvdOptions) -> Result<TopEigen> {
    let n = g.rows();
    let block = n.min(k + (k / 2).max(10));

    // columns stored as rows for contiguous access
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut q = orthonormalize_rows(start, n);
    let mut w = apply_sym(g, &q);

    let mut last_residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        if iter > 1 {
            q = orthonormalize_rows(w, n);
            w = apply_sym(g, &q);
        }
        // H = Qᵀ G Q
        let mut h = Matrix::zeros(block, block);
        for i in 0..block {
            for j in i..block {
                let v = dot(&q[i], &w[j]);
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        let (theta, rot) = jacobi_eigen(&h);
        q = rotate(&q, &rot);
        w = rotate(&w, &rot);

        let scale = theta.first().copied().unwrap_or(0.0).abs();
        let mut residual: f64 = 0.0;
        for i in 0..k {
            let r: f64 = w[i]
                .iter()
                .zip(&q[i])
                .map(|(wi, qi)| {
                    let d = wi - theta[i] * qi;
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            residual = residual.max(r);
        }
        last_residual = if scale > 0.0 { residual / scale } else { 0.0 };
        if residual <= opts.tol * scale {
            q.truncate(k);
            return Ok(TopEigen {
                vectors: Matrix::from_rows(&q),
                values: theta[..k].to_vec(),
                iterations: iter,
            });
        }
    }
    Err(LinalgError::ConvergenceFailure {
        iterations: opts.max_iter,
        residual: last_residual,
    })
}

/// `G·qᵢ` for every row `qᵢ` (G symmetric).
fn apply_sym(g: &Matrix, q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    q.par_iter()
        .map(|qi| g.row_iter().map(|gr| dot(gr, qi)).collect())
        .collect()
}

/// Rows of the result are `Σⱼ rot[j][i]·vⱼ`, i.e. `V·R` in column terms.
fn rotate(v: &[Vec<f64>], rot: &Matrix) -> Vec<Vec<f64>> {
    let p = v.len();
    let n = v.first().map_or(0, Vec::len);
    (0..p)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; n];
            for (j, vj) in v.iter().enumerate() {
                let c = rot.get(j, i);
                if c == 0.0 {
                    continue;
                }
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += c * x;
                }
            }
            out
        })
        .collect()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Rows that
/// collapse numerically are replaced by standard basis vectors outside the
/// current span.
fn orthonormalize_rows(mut rows: Vec<Vec<f64>>, n: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for mut v in rows.drain(..) {
        let original = norm(&v);
        for _ in 0..2 {
            for u in &out {
                let c = dot(&v, u);
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= c * y;
                }
            }
        }
        let nv = norm(&v);
        if original == 0.0 || nv <= 1e-10 * original {
            if out.len() >= n {
                continue;
            }
            v = next_standard_complement(&out, n);
        } else {
            v.iter_mut().for_each(|x| *x /= nv);
        }
        out.push(v);
    }
    out
}

/// First standard basis vector with a substantial component outside the span
/// of `basis`, orthogonalized and normalized.
fn next_standard_complement(basis: &[Vec<f64>], n: usize) -> Vec<f64> {
    for e in 0..n {
        let mut v = vec![0.0; n];
        v[e] = 1.0;
        for _ in 0..2 {
            for u in basis {
                let c = dot(&v, u);
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= c * y;
                }
            }
        }
        let nv = norm(&v);
        if nv > 0.5 {
            v.iter_mut().for_each(|x| *x /= nv);
            return v;
        }
    }
    unreachable!("basis already spans the space")
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
///
/// Returns eigenvalues in descending order and the matrix whose column `i` is
/// the eigenvector for value `i`.
pub(crate) fn jacobi_eigen(h: &Matrix) -> (Vec<f64>, Matrix) {
    let n = h.rows();
    let mut a = h.clone();
    let mut v = Matrix::identity(n);
    let total: f64 = a.frobenius_norm();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a.get(r, p);
                    let arq = a.get(r, q);
                    a.set(r, p, c * arp - s * arq);
                    a.set(r, q, s * arp + c * arq);
                }
                for r in 0..n {
                    let apr = a.get(p, r);
                    let aqr = a.get(q, r);
                    a.set(p, r, c * apr - s * aqr);
                    a.set(q, r, s * apr + c * aqr);
                }
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, c * vrp - s * vrq);
                    v.set(r, q, s * vrp + c * vrq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut sorted = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            sorted.set(r, new, v.get(r, old));
        }
    }
    (values, sorted)
}

/// Result of [`pca_reduce`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub reduced: Matrix,
    pub basis: OrthonormalBasis,
    pub mean: Vec<f64>,
}

impl Pca {
    /// Projects new points with the fitted mean and basis.
    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.mean.len() {
            return Err(LinalgError::DimMismatch {
                expected: self.mean.len(),
                found: m.cols(),
            });
        }
        let mut out = Matrix::zeros(m.rows(), self.basis.k());
        let mut centered = vec![0.0; m.cols()];
        for (i, r) in m.row_iter().enumerate() {
            for ((c, x), mu) in centered.iter_mut().zip(r).zip(&self.mean) {
                *c = x - mu;
            }
            for j in 0..self.basis.k() {
                out.set(i, j, dot(&centered, self.basis.vector(j)));
            }
        }
        Ok(out)
    }
}

/// Mean-centers the rows of `m` and projects them onto the top `d_out`
/// principal directions.
///
/// When `d_out >= dim` and `clamp` is set, the basis is the identity and the
/// reduced data is the centered input. Without `clamp`, `d_out > dim` fails.
pub fn pca_reduce(m: &Matrix, d_out: usize, clamp: bool) -> Result<Pca> {
    let dim = m.cols();
    if d_out == 0 {
        return Err(LinalgError::ZeroRank);
    }
    if d_out > dim && !clamp {
        return Err(LinalgError::DTooLarge { d_out, dim });
    }
    let mean = m.column_means();
    let mut centered = m.clone();
    for i in 0..centered.rows() {
        for (x, mu) in centered.row_mut(i).iter_mut().zip(&mean) {
            *x -= mu;
        }
    }
    if d_out >= dim {
        return Ok(Pca {
            reduced: centered,
            basis: OrthonormalBasis::standard(dim, dim),
            mean,
        });
    }
    let svd = top_right_singular(&centered, d_out, &SvdOptions::default())?;
    let pca = Pca {
        reduced: Matrix::zeros(0, 0),
        basis: svd.basis,
        mean,
    };
    let reduced = pca.transform(m)?;
    Ok(Pca { reduced, ..pca })
}

/// Scales every nonzero row to unit ℓ₂ norm. Zero rows are left as-is and
/// their indices returned.
pub fn unit_normalize(m: &Matrix) -> (Matrix, Vec<usize>) {
    let mut out = m.clone();
    let mut zero_rows = Vec::new();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n == 0.0 {
            zero_rows.push(i);
        } else {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    (out, zero_rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn rank_one_rows_force_the_axis() {
        let m = Matrix::from_rows(&[[2.0, 0.0], [4.0, 0.0]]);
        let svd = truncated_svd(&m, 1).unwrap();
        assert!(approx(svd.basis.vector(0), &[1.0, 0.0], 1e-12));
        assert!((svd.singular_values[0] - 20f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identity_rows_give_unit_singular_values() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let svd = truncated_svd(&m, 2).unwrap();
        assert!(approx(&svd.singular_values, &[1.0, 1.0], 1e-12));
        let p = svd.basis.projector();
        assert!(approx(p.as_slice(), Matrix::identity(2).as_slice(), 1e-12));
    }

    #[test]
    fn wide_matrix_goes_through_outer_gram() {
        // 2 rows, 4 columns
        let m = Matrix::from_rows(&[[3.0, 0.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]]);
        let svd = truncated_svd(&m, 2).unwrap();
        assert!(approx(&svd.singular_values, &[3.0, 2.0], 1e-12));
        assert!(approx(svd.basis.vector(0), &[1.0, 0.0, 0.0, 0.0], 1e-12));
        assert!(approx(svd.basis.vector(1), &[0.0, 0.0, 1.0, 0.0], 1e-12));
    }

    #[test]
    fn rank_errors() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        assert_eq!(truncated_svd(&m, 0), Err(LinalgError::ZeroRank));
        assert_eq!(
            truncated_svd(&m, 2),
            Err(LinalgError::KTooLarge { k: 2, max: 1 })
        );
    }

    #[test]
    fn zero_matrix_is_handled() {
        let m = Matrix::zeros(5, 3);
        let svd = truncated_svd(&m, 2).unwrap();
        assert_eq!(svd.singular_values, vec![0.0, 0.0]);
        assert!(orthonormality_deviation(svd.basis.vectors()) < 1e-12);
    }

    #[test]
    fn sign_convention_makes_largest_entry_non_negative() {
        let m = Matrix::from_rows(&[[0.0, -5.0, 1.0], [0.0, -4.0, 0.5], [1.0, 0.0, 0.0]]);
        let svd = truncated_svd(&m, 2).unwrap();
        for i in 0..2 {
            let v = svd.basis.vector(i);
            let (idx, _) = v
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (j, x)| if x.abs() > acc.1 { (j, x.abs()) } else { acc });
            assert!(v[idx] >= 0.0);
        }
    }

    #[test]
    fn project_out_removes_axis() {
        let b = OrthonormalBasis::standard(2, 1);
        assert_eq!(project_out(&[3.0, 4.0], &b).unwrap(), vec![0.0, 4.0]);
        let v = [0.0, 7.5];
        let out = project_out(&v, &b).unwrap();
        assert!(approx(&out, &v, 1e-12));
        assert_eq!(
            project_out(&[1.0, 2.0, 3.0], &b),
            Err(LinalgError::DimMismatch {
                expected: 2,
                found: 3
            })
        );
    }

    #[test]
    fn basis_validation_rejects_non_orthogonal_rows() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            OrthonormalBasis::new(m),
            Err(LinalgError::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn pca_clamps_to_dimension() {
        let m = Matrix::from_rows(&(0..10).map(|i| {
            let x = i as f64;
            [x, x * x, 1.0 - x, 0.5, x.sin(), x.cos(), 2.0 * x, -x]
        }).collect::<Vec<_>>());
        let pca = pca_reduce(&m, 16, true).unwrap();
        assert_eq!(pca.reduced.cols(), 8);
        let mean = m.column_means();
        for i in 0..m.rows() {
            for j in 0..8 {
                assert_eq!(pca.reduced.get(i, j), m.get(i, j) - mean[j]);
            }
        }
        assert_eq!(
            pca_reduce(&m, 16, false),
            Err(LinalgError::DTooLarge { d_out: 16, dim: 8 })
        );
    }

    #[test]
    fn pca_with_fewer_rows_than_components() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [2.0, 2.0, 2.0, 2.0]]);
        let pca = pca_reduce(&m, 3, false).unwrap();
        assert_eq!(pca.reduced.cols(), 3);
        assert!(orthonormality_deviation(pca.basis.vectors()) < 1e-9);
    }

    #[test]
    fn unit_normalize_flags_zero_rows() {
        let m = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]);
        let (n, zeros) = unit_normalize(&m);
        assert!(approx(n.row(0), &[0.6, 0.8], 1e-15));
        assert_eq!(n.row(1), &[0.0, 0.0]);
        assert_eq!(zeros, vec![1]);
    }

    #[test]
    fn jacobi_diagonalizes() {
        let h = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let (vals, vecs) = jacobi_eigen(&h);
        assert!(approx(&vals, &[3.0, 1.0], 1e-14));
        let c0 = [vecs.get(0, 0), vecs.get(1, 0)];
        assert!((c0[0].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((c0[0] - c0[1]).abs() < 1e-14);
    }
}
