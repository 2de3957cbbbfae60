//! Small dense linear algebra: a row-major matrix, one-sided Jacobi SVD,
//! least squares, k-means and the mixed norms used by the logit-distance
//! bounds.
//!
//! Everything here is sized for matrices of a few hundred rows at most.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances shared across the crate.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Jacobi rotations stop once every column pair is orthogonal to this
    /// relative level.
    pub jacobi_orthogonality: f64,
    /// Singular values below `rank_cutoff * s_max` count as zero.
    pub rank_cutoff: f64,
    /// Representation invariants (homomorphism, orthogonality).
    pub irrep_check: f64,
    /// Character inner products must round to integers within this.
    pub character_rounding: f64,
    /// Exact rho-set constructions: closure under the action.
    pub rho_set_exact: f64,
    /// Dot-product threshold (as `1 - x`) for deduplicating rho-set vectors.
    pub rho_set_dedup: f64,
    /// Neuron scale below which a fit is considered degenerate.
    pub degenerate_scale: f64,
    /// Denominator magnitude below which the equivariance metric is flagged.
    pub equivariance_denominator: f64,
}

pub const TOL: Tolerances = Tolerances {
    jacobi_orthogonality: 1e-15,
    rank_cutoff: 1e-12,
    irrep_check: 1e-8,
    character_rounding: 1e-6,
    rho_set_exact: 1e-6,
    rho_set_dedup: 1e-9,
    degenerate_scale: 1e-10,
    equivariance_denominator: 1e-12,
};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Validation(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Validation("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |r, c| a[r] * b[c])
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_col(&mut self, c: usize, values: &[f64]) {
        for (r, v) in values.iter().enumerate() {
            self[(r, c)] = *v;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// `self * other` through the blocked GEMM kernel.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(self.rows, self.cols, other.cols, 1.0, &self.data, false, &other.data, false, 0.0, &mut out.data);
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ v`
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            axpy(vr, self.row(r), &mut out);
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        norm2(&self.data)
    }

    /// Frobenius inner product `tr(selfᵀ other)`.
    pub fn frob_dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Row-major GEMM: `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. Transposed operands are read in place.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe `a` (m x k), `b` (k x n) and `c`
    // (m x n) within the asserted slice lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Thin singular value decomposition `M = U diag(s) Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows x min(rows, cols)`, orthonormal columns.
    pub u: Matrix,
    /// Descending, nonnegative.
    pub s: Vec<f64>,
    /// `cols x min(rows, cols)`, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        Matrix::from_fn(self.u.rows(), self.v.rows(), |r, c| {
            (0..k).map(|j| self.u[(r, j)] * self.s[j] * self.v[(c, j)]).sum()
        })
    }

    pub fn spectral_norm(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

/// One-sided Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::Validation("svd input has non-finite entries".into()));
    }
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let (rows, cols) = (m.rows(), m.cols());
    // Work column-major so rotations touch contiguous memory.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|c| m.col(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| {
            let mut e = vec![0.0; cols];
            e[c] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= TOL.jacobi_orthogonality * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = a.iter().map(|col| norm2(col)).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let mut u = Matrix::zeros(rows, cols);
    let mut vm = Matrix::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for (j, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        vm.set_col(j, &v[src]);
        if sigma > TOL.rank_cutoff * smax.max(f64::MIN_POSITIVE) {
            let col: Vec<f64> = a[src].iter().map(|x| x / sigma).collect();
            u_cols.push(col);
        } else {
            u_cols.push(Vec::new());
        }
    }
    // Complete the left basis where singular values vanished.
    for j in 0..cols {
        if u_cols[j].is_empty() {
            u_cols[j] = orthogonal_complement_vector(&u_cols, rows);
        }
        u.set_col(j, &u_cols[j]);
    }
    Ok(Svd { u, s, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

fn orthogonal_complement_vector(existing: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let basis: Vec<&Vec<f64>> = existing.iter().filter(|c| !c.is_empty()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        // Two passes of Gram-Schmidt for stability.
        for _ in 0..2 {
            for b in &basis {
                let d = dot(&v, b);
                axpy(-d, b, &mut v);
            }
        }
        let n = norm2(&v);
        if best.as_ref().map_or(true, |(bn, _)| n > *bn) {
            best = Some((n, v));
        }
    }
    let (n, v) = best.expect("dim > 0");
    v.into_iter().map(|x| x / n).collect()
}

#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residual: f64,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimum-norm least squares via the SVD.
pub fn least_squares(a: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    if a.rows() < a.cols() {
        return Err(Error::Validation(format!(
            "least squares needs rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != y.len() {
        return Err(Error::Validation("least squares rhs length mismatch".into()));
    }
    let d = svd(a)?;
    let smax = d.spectral_norm();
    let cutoff = 1e-10 * smax;
    let uty = d.u.tr_matvec(y);
    let mut x = vec![0.0; a.cols()];
    let mut rank = 0;
    for (j, &sigma) in d.s.iter().enumerate() {
        if sigma > cutoff {
            rank += 1;
            let coef = uty[j] / sigma;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += coef * d.v[(i, j)];
            }
        }
    }
    let fitted = a.matvec(&x);
    let residual = fitted.iter().zip(y).map(|(f, t)| (f - t) * (f - t)).sum::<f64>().sqrt();
    Ok(LeastSquares { coefficients: x, residual, rank, rank_deficient: rank < a.cols() })
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::Validation(format!("kmeans: k = {k} with {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(&centroids, p).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, di) in d.iter().enumerate() {
                if target < *di {
                    idx = i;
                    break;
                }
                target -= di;
            }
            idx
        };
        centroids.push(points[pick].clone());
    }

    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _iter in 0..200 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, _) = nearest(&centroids, p);
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            axpy(1.0, p, &mut sums[assignment[i]]);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        // Reseed empty clusters from the farthest point.
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        nearest(&centroids, &points[a]).1.total_cmp(&nearest(&centroids, &points[b]).1)
                    })
                    .expect("points nonempty");
                centroids[j] = points[far].clone();
                assignment[far] = j;
                changed = true;
            }
        }
        let inertia: f64 = points.iter().enumerate().map(|(i, p)| sq_dist(p, &centroids[assignment[i]])).sum();
        history.push(inertia);
        if !changed {
            break;
        }
    }
    // Final nearest assignment against the final centroids.
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(&centroids, p).0;
    }
    let inertia = points.iter().enumerate().map(|(i, p)| sq_dist(p, &centroids[assignment[i]])).sum();
    KMeansResult { k, centroids, assignment, inertia, history }
}

/// Mean silhouette coefficient of a clustering (0 when `k < 2`).
pub fn silhouette(points: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    if k < 2 || points.len() < 2 {
        return 0.0;
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[assignment[j]] += dist2(&points[i], &points[j]);
                counts[assignment[j]] += 1;
            }
        }
        let own = assignment[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    total / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixedNorms {
    pub frobenius: f64,
    /// Maximum over rows of the row's l2 norm.
    pub max_row2: f64,
    /// Maximum over columns of the column's l2 norm.
    pub max_col2: f64,
    pub max_abs: f64,
}

pub fn mixed_norms(m: &Matrix) -> MixedNorms {
    let max_row2 = (0..m.rows()).map(|r| norm2(m.row(r))).fold(0.0, f64::max);
    let mut col_sq = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            col_sq[c] += v * v;
        }
    }
    MixedNorms {
        frobenius: m.frobenius(),
        max_row2,
        max_col2: col_sq.into_iter().fold(0.0, f64::max).sqrt(),
        max_abs: m.as_slice().iter().fold(0.0, |acc, v| acc.max(v.abs())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn assert_orthonormal_cols(m: &Matrix, tol: f64) {
        let g = m.transpose().matmul(m);
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < tol, "gram[{i},{j}] = {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn svd_identity() {
        let d = svd(&Matrix::identity(3)).unwrap();
        for s in &d.s {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn svd_rank_one() {
        let a = normalized(&[1.0, 2.0, -2.0]).unwrap();
        let b = normalized(&[0.5, -1.0, 3.0, 1.0]).unwrap();
        let d = svd(&Matrix::outer(&a, &b)).unwrap();
        assert!((d.s[0] - 1.0).abs() < 1e-12);
        assert!(d.s[1..].iter().all(|s| s.abs() < 1e-12));
        assert_orthonormal_cols(&d.u, 1e-9);
        assert_orthonormal_cols(&d.v, 1e-9);
    }

    #[test]
    fn svd_random_reconstruction() {
        for (rows, cols, seed) in [(5, 4, 1), (4, 5, 2), (24, 9, 3), (1, 6, 4)] {
            let m = random_matrix(rows, cols, seed);
            let d = svd(&m).unwrap();
            let err = d.reconstruct().sub(&m).frobenius();
            assert!(err < 1e-9 * m.frobenius(), "{rows}x{cols}: {err}");
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
            assert_orthonormal_cols(&d.u, 1e-9);
            assert_orthonormal_cols(&d.v, 1e-9);
        }
    }

    #[test]
    fn svd_rejects_nan() {
        let mut m = Matrix::identity(2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn svd_row_permutation_invariance() {
        let m = random_matrix(6, 3, 11);
        let perm = [3, 0, 5, 1, 4, 2];
        let pm = Matrix::from_fn(6, 3, |r, c| m[(perm[r], c)]);
        let d1 = svd(&m).unwrap();
        let d2 = svd(&pm).unwrap();
        for j in 0..3 {
            assert!((d1.s[j] - d2.s[j]).abs() < 1e-12);
            let sign = d1.v.col(j).iter().zip(d2.v.col(j)).map(|(a, b)| a * b).sum::<f64>().signum();
            for r in 0..6 {
                assert!((d2.u[(r, j)] - sign * d1.u[(perm[r], j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn least_squares_orthonormal_columns() {
        let q = svd(&random_matrix(7, 3, 5)).unwrap().u;
        let y: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let ls = least_squares(&q, &y).unwrap();
        let want = q.tr_matvec(&y);
        for (a, b) in ls.coefficients.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn least_squares_exact_system() {
        let a = random_matrix(8, 4, 6);
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let y = a.matvec(&x);
        let ls = least_squares(&a, &y).unwrap();
        assert!(ls.residual <= 1e-10);
        assert!(!ls.rank_deficient);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let a = random_matrix(12, 3, 7);
        let y: Vec<f64> = random_matrix(12, 1, 8).into_vec();
        let ls = least_squares(&a, &y).unwrap();
        // Normal equations solved by Cramer's rule on the 3x3 Gram matrix.
        let g = a.transpose().matmul(&a);
        let rhs = a.tr_matvec(&y);
        let det3 = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let base = [[g[(0, 0)], g[(0, 1)], g[(0, 2)]], [g[(1, 0)], g[(1, 1)], g[(1, 2)]], [g[(2, 0)], g[(2, 1)], g[(2, 2)]]];
        let d = det3(&base);
        for j in 0..3 {
            let mut m = base;
            for i in 0..3 {
                m[i][j] = rhs[i];
            }
            assert!((det3(&m) / d - ls.coefficients[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn least_squares_rank_deficient_is_flagged() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let ls = least_squares(&a, &[1.0, 2.0, 3.0]).unwrap();
        assert!(ls.rank_deficient);
        assert!((ls.coefficients[0] - 0.5).abs() < 1e-12 && (ls.coefficients[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 1, 3).unwrap();
        assert!(r.inertia < 1e-20);
    }

    #[test]
    fn kmeans_two_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let r = kmeans(&pts, 2, 3, 4).unwrap();
        let mut cs = r.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    }

    #[test]
    fn kmeans_tetrahedral_directions() {
        // Five unit directions of the 4-simplex, five noisy copies each.
        let s = 5f64;
        let dirs: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let mut v: Vec<f64> = (0..5).map(|j| if i == j { 1.0 - 1.0 / s } else { -1.0 / s }).collect();
                let n = norm2(&v);
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        for d in &dirs {
            for _ in 0..5 {
                pts.push(d.iter().map(|x| x + 1e-4 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>());
            }
        }
        let r = kmeans(&pts, 5, 2, 5).unwrap();
        for d in &dirs {
            let (_, dd) = nearest(&r.centroids, d);
            assert!(dd.sqrt() < 1e-3);
        }
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn kmeans_more_clusters_never_worse() {
        let m = random_matrix(30, 2, 13);
        let pts: Vec<Vec<f64>> = (0..30).map(|r| m.row(r).to_vec()).collect();
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let r = kmeans(&pts, k, 4, 20).unwrap();
            assert!(r.inertia <= prev + 1e-9, "k={k}");
            prev = r.inertia;
        }
    }

    #[test]
    fn mixed_norms_examples() {
        let i = mixed_norms(&Matrix::identity(4));
        assert_eq!((i.max_row2, i.max_col2), (1.0, 1.0));
        let mut single = Matrix::zeros(3, 2);
        single[(1, 1)] = -2.5;
        let s = mixed_norms(&single);
        assert_eq!([s.frobenius, s.max_row2, s.max_col2, s.max_abs], [2.5; 4]);
        let ones = mixed_norms(&Matrix::from_fn(2, 3, |_, _| 1.0));
        assert!((ones.max_row2 - 3f64.sqrt()).abs() < 1e-15);
        assert!((ones.max_col2 - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gemm_transposes() {
        let a = random_matrix(3, 4, 20);
        let b = random_matrix(3, 5, 21);
        let mut c = vec![0.0; 20];
        gemm(4, 3, 5, 1.0, a.as_slice(), true, b.as_slice(), false, 0.0, &mut c);
        let want = a.transpose().matmul(&b);
        for (x, y) in c.iter().zip(want.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
