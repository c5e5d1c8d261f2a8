//! Dense 64-bit linear algebra used by every other module.
//!
//! Everything here is a pure function of its inputs. The SVD is a one-sided
//! (Hestenes) Jacobi iteration, which gives singular vectors that are
//! orthogonal to working precision even for tiny singular values, followed by
//! a deterministic sign and ordering convention.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero when
/// measuring numerical rank.
pub const NUMERICAL_RANK_RTOL: f64 = 1e-8;

/// Dense row-major matrix of 64-bit reals.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = self
                .row(i)
                .iter()
                .take(8)
                .map(|v| format!("{v:.6e}"))
                .collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    /// Builds a matrix from row-major data, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Mat::from_vec",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "matrix data" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape {
                op: "Mat::from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::from_vec(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    /// Unchecked constructor for results of arithmetic on finite inputs.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn from_cols(rows: usize, cols: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Matrix product. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (n, p) = (self.cols, other.cols);
        let mut out = vec![0.0; self.rows * p];
        for i in 0..self.rows {
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * p..(k + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Mat::from_raw(self.rows, p, out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t: inner dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    fn zip_with(&self, other: &Mat, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "{op}: shape mismatch");
        Mat::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Mat, s: f64) -> Mat {
        self.zip_with(other, "add_scaled", |a, b| a + s * b)
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.rows).all(|i| ((i + 1)..self.cols).all(|j| self.get(i, j) == 0.0))
    }

    /// Multiplies column `j` by `d[j]`.
    pub fn scale_cols(&self, d: &[f64]) -> Mat {
        assert_eq!(d.len(), self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            for (v, &s) in out.row_mut(i).iter_mut().zip(d) {
                *v *= s;
            }
        }
        out
    }

    /// Multiplies row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[f64]) -> Mat {
        assert_eq!(d.len(), self.rows);
        let mut out = self.clone();
        for (i, &s) in d.iter().enumerate() {
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        out
    }

    pub fn select_cols(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (jj, &j) in idx.iter().enumerate() {
                out.data[i * idx.len() + jj] = self.get(i, j);
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat::from_raw(idx.len(), self.cols, data)
    }

    /// Leading `count` columns.
    pub fn first_cols(&self, count: usize) -> Mat {
        self.select_cols(&(0..count).collect::<Vec<_>>())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin singular value decomposition `a = u * diag(sigma) * vt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// m x r, orthonormal columns.
    pub u: Mat,
    /// r values, descending, non-negative.
    pub sigma: Vec<f64>,
    /// r x n, orthonormal rows.
    pub vt: Mat,
}

impl Svd {
    pub fn rank_full(&self) -> usize {
        self.sigma.len()
    }

    /// `u * diag(sigma) * vt`.
    pub fn reconstruct(&self) -> Mat {
        self.u.scale_cols(&self.sigma).matmul(&self.vt)
    }

    /// Best rank-`k` approximation `U_k Σ_k V_k^T`.
    pub fn truncated(&self, k: usize) -> Mat {
        let k = k.min(self.sigma.len());
        let idx: Vec<usize> = (0..k).collect();
        self.u
            .select_cols(&idx)
            .scale_cols(&self.sigma[..k])
            .matmul(&self.vt.select_rows(&idx))
    }
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// Sign convention: in every column of `u` the entry of largest magnitude is
/// non-negative (lowest row index wins ties) and the matching row of `vt` is
/// flipped with it. Exactly equal singular values are ordered by the
/// lexicographic order of their sign-fixed `u` columns.
pub fn svd(a: &Mat) -> Result<Svd> {
    if a.is_empty() {
        return Err(Error::Empty { op: "svd" });
    }
    if !a.all_finite() {
        return Err(Error::NonFinite { what: "svd input" });
    }
    let (m, n) = a.shape();
    // Jacobi works on the tall orientation; `left` has the long side.
    let transposed = m < n;
    let tall = if transposed { a.transpose() } else { a.clone() };
    let (left, sigma, right) = jacobi_tall(&tall).map_err(|sweeps| Error::SvdNoConvergence {
        rows: m,
        cols: n,
        sweeps,
    })?;
    let (mut ucols, mut vcols) = if transposed {
        (right, left)
    } else {
        (left, right)
    };

    for (uc, vc) in ucols.iter_mut().zip(vcols.iter_mut()) {
        let mut best = 0;
        for (i, v) in uc.iter().enumerate() {
            if v.abs() > uc[best].abs() {
                best = i;
            }
        }
        if uc[best] < 0.0 {
            uc.iter_mut().for_each(|v| *v = -*v);
            vc.iter_mut().for_each(|v| *v = -*v);
        }
    }

    let r = sigma.len();
    let mut idx: Vec<usize> = (0..r).collect();
    idx.sort_by(|&i, &j| {
        sigma[j]
            .total_cmp(&sigma[i])
            .then_with(|| lexicographic(&ucols[i], &ucols[j]))
    });

    let u = Mat::from_cols(m, &idx.iter().map(|&i| ucols[i].clone()).collect::<Vec<_>>());
    let mut vt = Mat::zeros(r, n);
    for (row, &i) in idx.iter().enumerate() {
        vt.row_mut(row).copy_from_slice(&vcols[i]);
    }
    Ok(Svd {
        u,
        sigma: idx.iter().map(|&i| sigma[i]).collect(),
        vt,
    })
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

type JacobiOut = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

/// One-sided Jacobi on an m x n matrix with m >= n. Returns (left vectors,
/// singular values, right vectors), unsorted. `Err(sweeps)` on non-convergence.
fn jacobi_tall(a: &Mat) -> std::result::Result<JacobiOut, usize> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * m as f64;
    let max_sweeps = 100 * n.max(1);
    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == max_sweeps {
            return Err(max_sweeps);
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }

    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let smax = sigma.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut left: Vec<Option<Vec<f64>>> = cols
        .into_iter()
        .zip(&sigma)
        .map(|(c, &s)| {
            if s > 0.0 && s > smax * 1e-150 {
                Some(c.into_iter().map(|x| x / s).collect())
            } else {
                None
            }
        })
        .collect();
    let sigma: Vec<f64> = sigma
        .iter()
        .zip(&left)
        .map(|(&s, l)| if l.is_some() { s } else { 0.0 })
        .collect();

    // Zero columns carry no direction; complete them to an orthonormal set.
    for j in 0..n {
        if left[j].is_some() {
            continue;
        }
        let basis: Vec<Vec<f64>> = left.iter().flatten().cloned().collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(&cand, b);
                    cand.iter_mut().zip(b).for_each(|(c, &bv)| *c -= proj * bv);
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(bn, _)| norm > *bn + 1e-12) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("m >= 1");
        left[j] = Some(cand.into_iter().map(|x| x / norm).collect());
    }

    Ok((left.into_iter().map(Option::unwrap).collect(), sigma, v))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Lower-triangular `S` with `S S^T = c + lambda I`.
pub fn cholesky_ridge(c: &Mat, lambda: f64) -> Result<Mat> {
    let (n, nc) = c.shape();
    if n != nc {
        return Err(Error::Shape {
            op: "cholesky_ridge",
            detail: format!("expected square matrix, got {n}x{nc}"),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge must be finite and >= 0, got {lambda}")));
    }
    if !c.all_finite() {
        return Err(Error::NonFinite { what: "cholesky input" });
    }
    let scale = c.max_abs().max(f64::MIN_POSITIVE);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((c.get(i, j) - c.get(j, i)).abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }

    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = c.get(j, j) + lambda;
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite {
                n,
                lambda,
                pivot: j,
                value: d,
            });
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            // lower triangle of the symmetrized input
            let mut v = 0.5 * (c.get(i, j) + c.get(j, i));
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / djj);
        }
    }
    Ok(l)
}

fn check_triangular_factor(s: &Mat, other_cols: usize, op: &'static str) -> Result<()> {
    if s.rows() != s.cols() {
        return Err(Error::Shape {
            op,
            detail: format!("factor must be square, got {}x{}", s.rows(), s.cols()),
        });
    }
    if other_cols != s.rows() {
        return Err(Error::Shape {
            op,
            detail: format!("operand has {} columns, factor is {}x{}", other_cols, s.rows(), s.cols()),
        });
    }
    if let Some(index) = (0..s.rows()).find(|&i| s.get(i, i) == 0.0) {
        return Err(Error::SingularFactor { index });
    }
    Ok(())
}

/// Solves `H S^T = G` for `H` with `S` lower triangular (forward substitution
/// per row of `G`).
pub fn solve_right_inverse_transpose(g: &Mat, s: &Mat) -> Result<Mat> {
    check_triangular_factor(s, g.cols(), "solve_right_inverse_transpose")?;
    let n = s.rows();
    let mut h = Mat::zeros(g.rows(), n);
    for r in 0..g.rows() {
        let grow = g.row(r);
        let hrow = h.row_mut(r);
        // (H S^T)_{r,j} = sum_{k<=j} H_{r,k} S_{j,k}
        for j in 0..n {
            let srow = s.row(j);
            let acc = dot(&hrow[..j], &srow[..j]);
            hrow[j] = (grow[j] - acc) / srow[j];
        }
    }
    Ok(h)
}

/// Solves `Z S = M` for `Z` with `S` lower triangular (back substitution per
/// row of `M`).
pub fn solve_right_inverse(m: &Mat, s: &Mat) -> Result<Mat> {
    check_triangular_factor(s, m.cols(), "solve_right_inverse")?;
    let n = s.rows();
    let mut z = Mat::zeros(m.rows(), n);
    for r in 0..m.rows() {
        let mrow = m.row(r);
        let zrow = z.row_mut(r);
        // (Z S)_{r,j} = sum_{k>=j} Z_{r,k} S_{k,j}
        for j in (0..n).rev() {
            let mut acc = 0.0;
            for k in (j + 1)..n {
                acc += zrow[k] * s.get(k, j);
            }
            zrow[j] = (mrow[j] - acc) / s.get(j, j);
        }
    }
    Ok(z)
}

/// Frobenius inner product `tr(a^T b)`.
pub fn frob_inner(a: &Mat, b: &Mat) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "frob_inner",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(dot(a.data(), b.data()))
}

/// Smallest `k` whose leading squared singular values hold at least `tau` of
/// the total energy.
pub fn effective_rank(sigma: &[f64], tau: f64) -> Result<usize> {
    if sigma.is_empty() {
        return Err(Error::Empty { op: "effective_rank" });
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::NonFinite { what: "spectrum" });
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    let mut acc = 0.0;
    for (k, s) in sigma.iter().enumerate() {
        acc += s * s;
        if acc / total >= tau {
            return Ok(k + 1);
        }
    }
    Ok(sigma.len())
}

/// Number of singular values above `NUMERICAL_RANK_RTOL * sigma_1`.
pub fn numerical_rank(sigma: &[f64]) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s > NUMERICAL_RANK_RTOL * top).count()
}


#[cfg(test)]
mod tests {
    use super::testutil::{random, random_lower};
    use super::*;

    fn assert_svd_contract(a: &Mat, s: &Svd) {
        let r = a.rows().min(a.cols());
        assert_eq!(s.sigma.len(), r);
        for w in s.sigma.windows(2) {
            assert!(w[0] >= w[1] && w[1] >= 0.0);
        }
        let utu = s.u.transpose().matmul(&s.u);
        assert!(utu.sub(&Mat::identity(r)).max_abs() <= 1e-10);
        let vvt = s.vt.matmul_t(&s.vt);
        assert!(vvt.sub(&Mat::identity(r)).max_abs() <= 1e-10);
        let err = s.reconstruct().sub(a).frob_norm();
        assert!(err <= 1e-10 * a.frob_norm().max(1.0), "reconstruction {err}");
        for j in 0..r {
            let col = s.u.col(j);
            let mut best = 0;
            for i in 0..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            assert!(col[best] >= 0.0);
        }
    }

    #[test]
    fn svd_of_diagonal() {
        let a = Mat::diag(&[3.0, 2.0]);
        let s = svd(&a).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0]);
        assert_eq!(s.u, Mat::identity(2));
        assert_eq!(s.vt, Mat::identity(2));
    }

    #[test]
    fn svd_of_permutation() {
        let a = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - 1.0).abs() < 1e-15 && (s.sigma[1] - 1.0).abs() < 1e-15);
        assert_svd_contract(&a, &s);
    }

    #[test]
    fn svd_random_shapes() {
        for (seed, (m, n)) in [(5, 3), (3, 5), (1, 4), (4, 1), (7, 7), (20, 11), (9, 30)]
            .into_iter()
            .enumerate()
        {
            let a = random(m, n, seed as u64);
            let s = svd(&a).unwrap();
            assert_svd_contract(&a, &s);
        }
    }

    #[test]
    fn svd_rank_deficient_completes_basis() {
        let a = random(8, 2, 1).matmul(&random(2, 6, 2));
        let s = svd(&a).unwrap();
        assert_svd_contract(&a, &s);
        assert_eq!(numerical_rank(&s.sigma), 2);
        let z = Mat::zeros(3, 4);
        let s = svd(&z).unwrap();
        assert_eq!(s.sigma, vec![0.0; 3]);
        assert_svd_contract(&z, &s);
    }

    #[test]
    fn svd_is_deterministic() {
        let a = random(12, 9, 42);
        assert_eq!(svd(&a).unwrap(), svd(&a).unwrap());
    }

    #[test]
    fn svd_rejects_empty_and_nan() {
        assert!(matches!(svd(&Mat::zeros(0, 3)), Err(Error::Empty { .. })));
        let mut a = Mat::zeros(2, 2);
        a.set(0, 0, f64::NAN);
        assert!(svd(&a).is_err());
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky_ridge(&Mat::identity(2), 0.0).unwrap(), Mat::identity(2));
        let c = Mat::from_rows(&[&[4.0, 2.0], &[2.0, 5.0]]).unwrap();
        let s = cholesky_ridge(&c, 0.0).unwrap();
        assert_eq!(s, Mat::from_rows(&[&[2.0, 0.0], &[1.0, 2.0]]).unwrap());
        assert_eq!(s.matmul_t(&s), c);
        let s = cholesky_ridge(&Mat::zeros(2, 2), 1e-10).unwrap();
        assert!(s.sub(&Mat::identity(2).scale(1e-5)).max_abs() < 1e-20);
    }

    #[test]
    fn cholesky_failures() {
        let c = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        let err = cholesky_ridge(&c, 0.0).unwrap_err();
        assert!(err.to_string().contains("larger ridge"));
        assert!(matches!(cholesky_ridge(&Mat::zeros(2, 2), 0.0), Err(Error::NotPositiveDefinite { .. })));
        let asym = Mat::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]).unwrap();
        assert!(matches!(cholesky_ridge(&asym, 0.0), Err(Error::NotSymmetric { .. })));
        assert!(cholesky_ridge(&Mat::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn cholesky_random_spd_up_to_64() {
        for (seed, n) in [1usize, 2, 5, 17, 64].into_iter().enumerate() {
            let x = random(n, 2 * n + 3, seed as u64);
            let c = x.matmul_t(&x);
            let s = cholesky_ridge(&c, 1e-3).unwrap();
            assert!(s.is_lower_triangular());
            let target = c.add(&Mat::identity(n).scale(1e-3));
            assert!(s.matmul_t(&s).sub(&target).max_abs() <= 1e-9 * target.max_abs());
        }
    }

    #[test]
    fn triangular_solves() {
        let g = Mat::from_rows(&[&[0.5]]).unwrap();
        let s = Mat::from_rows(&[&[3.0]]).unwrap();
        let h = solve_right_inverse_transpose(&g, &s).unwrap();
        assert!((h.get(0, 0) - 1.0 / 6.0).abs() < 1e-16);
        let m = Mat::from_rows(&[&[6.0]]).unwrap();
        assert_eq!(solve_right_inverse(&m, &s).unwrap().get(0, 0), 2.0);

        let g = random(5, 3, 9);
        assert_eq!(solve_right_inverse_transpose(&g, &Mat::identity(3)).unwrap(), g);
        assert_eq!(solve_right_inverse(&g, &Mat::identity(3)).unwrap(), g);

        let s = random_lower(4, 3);
        let g = random(4, 4, 4);
        let h = solve_right_inverse_transpose(&g, &s).unwrap();
        assert!(h.matmul_t(&s).sub(&g).frob_norm() <= 1e-9 * g.frob_norm());
        let s3 = random_lower(3, 5);
        let m = random(3, 3, 6);
        let z = solve_right_inverse(&m, &s3).unwrap();
        assert!(z.matmul(&s3).sub(&m).frob_norm() <= 1e-9 * m.frob_norm());
    }

    #[test]
    fn triangular_solve_errors() {
        let mut s = Mat::identity(2);
        s.set(1, 1, 0.0);
        let g = Mat::zeros(1, 2);
        assert!(matches!(solve_right_inverse_transpose(&g, &s), Err(Error::SingularFactor { index: 1 })));
        assert!(matches!(solve_right_inverse(&g, &s), Err(Error::SingularFactor { index: 1 })));
        assert!(matches!(
            solve_right_inverse(&Mat::zeros(1, 3), &Mat::identity(2)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn frob_inner_examples() {
        let i2 = Mat::identity(2);
        assert_eq!(frob_inner(&i2, &i2).unwrap(), 2.0);
        let a = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        let b = Mat::from_rows(&[&[0.0, 0.0], &[0.0, 7.0]]).unwrap();
        assert_eq!(frob_inner(&a, &b).unwrap(), 0.0);
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(frob_inner(&a, &i2).unwrap(), 5.0);
        assert!(frob_inner(&a, &Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn effective_rank_examples() {
        assert_eq!(effective_rank(&[1.0, 0.0], 0.95).unwrap(), 1);
        assert_eq!(effective_rank(&[3.0, 1.0], 0.95).unwrap(), 2);
        // 100/104 = 0.9615...
        assert_eq!(effective_rank(&[10.0, 1.0, 1.0, 1.0, 1.0], 0.95).unwrap(), 1);
        assert!(matches!(effective_rank(&[0.0, 0.0], 0.5), Err(Error::ZeroSpectrum)));
        assert!(effective_rank(&[1.0], 0.0).is_err());
    }

    #[test]
    fn from_vec_validates() {
        assert!(Mat::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Mat::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }
}
