//! Dense row-major matrices and the handful of decompositions the rest of
//! the crate needs: products, cyclic Jacobi eigendecomposition, LU with
//! partial pivoting, and seeded SPD fixtures.
//!
//! Every routine uses a fixed accumulation order, so identical inputs give
//! bit-identical outputs.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm (relative to `max(1, ‖A‖_F)`) at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-12;
/// Largest tolerated `|a_ij − a_ji|` (relative to `max(1, max|a|)`) for symmetric inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols.max(1)) {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Mat<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or empty input;
    /// meant for literals.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        assert!(!rows.is_empty() && cols > 0, "empty matrix literal");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged matrix literal");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |r, c| if r == c { values[r] } else { T::zero() })
    }

    /// Column vector (`len × 1`).
    pub fn column(values: &[T]) -> Self {
        Self::from_fn(values.len(), 1, |r, _| values[r])
    }

    pub fn scalar(value: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Value of a `1 × 1` matrix.
    pub fn as_scalar(&self) -> Option<T> {
        (self.rows == 1 && self.cols == 1).then(|| self.data[0])
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), self.cols, |r, c| self.get(idx[r], c))
    }

    pub fn select_cols(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |r, c| self.get(r, idx[c]))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(parts: &[&Mat<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("hstack of nothing"))?;
        let rows = first.rows;
        for p in parts {
            if p.rows != rows {
                return Err(Error::Shape { op: "hstack", left: first.shape(), right: p.shape() });
            }
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            for r in 0..rows {
                for c in 0..p.cols {
                    out.set(r, offset + c, p.get(r, c));
                }
            }
            offset += p.cols;
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "subtract", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-row means as a `rows × 1` column.
    pub fn row_means(&self) -> Self {
        let m = T::from_usize(self.cols).unwrap();
        Self::from_fn(self.rows, 1, |r, _| self.row(r).iter().copied().sum::<T>() / m)
    }

    /// Subtracts `col[r]` from every entry of row `r`.
    pub fn sub_column(&self, col: &[T]) -> Result<Self> {
        if col.len() != self.rows {
            return Err(Error::Shape { op: "sub_column", left: self.shape(), right: (col.len(), 1) });
        }
        Ok(Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) - col[r]))
    }

    /// Repeats a column vector `width` times.
    pub fn broadcast_column(&self, width: usize) -> Result<Self> {
        if self.cols != 1 {
            return Err(Error::Shape { op: "broadcast-column", left: self.shape(), right: (self.rows, 1) });
        }
        Ok(Self::from_fn(self.rows, width, |r, _| self.data[r]))
    }

    /// Largest `|a_ij − a_ji|`; `None` for non-square input.
    pub fn asymmetry(&self) -> Option<T> {
        if !self.is_square() {
            return None;
        }
        let mut worst = T::zero();
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        Some(worst)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.asymmetry().is_some_and(|a| a <= tol * T::one().max(self.max_abs()))
    }

    /// `(A + Aᵀ)/2`, exactly symmetric.
    pub fn symmetrized(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Shape { op: "symmetrize", left: self.shape(), right: self.shape() });
        }
        let half = T::lit(0.5);
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                let v = (self.get(r, c) + self.get(c, r)) * half;
                out.set(r, c, v);
                out.set(c, r, v);
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape { op, left: self.shape(), right: other.shape() });
        }
        Ok(())
    }
}

impl<T: Scalar> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Matrix product. Each output entry is accumulated left to right over the
/// shared index.
pub fn gemm<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.cols != b.rows {
        return Err(Error::Shape { op: "gemm", left: a.shape(), right: b.shape() });
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bpj) in orow.iter_mut().zip(brow) {
                *o += aip * bpj;
            }
        }
    }
    Ok(Mat { rows: n, cols: m, data: out })
}

pub fn frobenius_distance<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<T> {
    Ok(a.sub(b)?.frobenius_norm())
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order and
/// eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Mat<T>,
}

impl<T: Scalar> EigenDecomposition<T> {
    /// `V · diag(f(λ)) · Vᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Mat<T> {
        let v = &self.eigenvectors;
        let n = v.rows();
        let scaled: Vec<T> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = T::zero();
                for (k, &s) in scaled.iter().enumerate() {
                    acc += v.get(i, k) * s * v.get(j, k);
                }
                out.set(i, j, acc);
                out.set(j, i, acc);
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Mat<T> {
        self.reconstruct_with(|l| l)
    }
}

fn off_diagonal_norm<T: Scalar>(a: &Mat<T>) -> T {
    let n = a.rows();
    let mut acc = T::zero();
    for r in 0..n {
        for c in 0..n {
            if r != c {
                acc += a.get(r, c) * a.get(r, c);
            }
        }
    }
    acc.sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig<T: Scalar>(a: &Mat<T>) -> Result<EigenDecomposition<T>> {
    if !a.is_square() {
        return Err(Error::Shape { op: "sym_eig", left: a.shape(), right: a.shape() });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("sym_eig input"));
    }
    if !a.is_symmetric(T::tol(SYMMETRY_TOL)) {
        return Err(Error::NotSymmetric(a.asymmetry().unwrap_or_default().to_f64_lossy()));
    }
    let n = a.rows();
    let mut work = a.symmetrized()?;
    let mut v = Mat::<T>::identity(n);
    let stop = T::tol(JACOBI_TOL) * T::one().max(a.frobenius_norm());

    let mut converged = off_diagonal_norm(&work) <= stop;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in p + 1..n {
                let apq = work.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let theta = (work.get(q, q) - work.get(p, p)) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = work.get(k, p);
                    let akq = work.get(k, q);
                    work.set(k, p, c * akp - s * akq);
                    work.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = work.get(p, k);
                    let aqk = work.get(q, k);
                    work.set(p, k, c * apk - s * aqk);
                    work.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&work) <= stop;
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps,
            residual: off_diagonal_norm(&work).to_f64_lossy(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work.get(j, j).partial_cmp(&work.get(i, i)).unwrap());
    let eigenvalues = order.iter().map(|&i| work.get(i, i)).collect();
    let eigenvectors = v.select_cols(&order);
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// LU factorization with partial pivoting, `P·A = L·U` packed into one matrix.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    packed: Mat<T>,
    perm: Vec<usize>,
    sign: T,
    singular: bool,
}

impl<T: Scalar> Lu<T> {
    pub fn new(a: &Mat<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape { op: "lu", left: a.shape(), right: a.shape() });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let mut singular = false;
        for k in 0..n {
            let mut pivot = k;
            let mut best = lu.get(k, k).abs();
            for r in k + 1..n {
                let v = lu.get(r, k).abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best == T::zero() {
                singular = true;
                continue;
            }
            if pivot != k {
                for c in 0..n {
                    let tmp = lu.get(k, c);
                    lu.set(k, c, lu.get(pivot, c));
                    lu.set(pivot, c, tmp);
                }
                perm.swap(k, pivot);
                sign = -sign;
            }
            let d = lu.get(k, k);
            for r in k + 1..n {
                let f = lu.get(r, k) / d;
                lu.set(r, k, f);
                for c in k + 1..n {
                    let v = lu.get(r, c) - f * lu.get(k, c);
                    lu.set(r, c, v);
                }
            }
        }
        Ok(Self { packed: lu, perm, sign, singular })
    }

    pub fn det(&self) -> T {
        if self.singular {
            return T::zero();
        }
        let n = self.packed.rows();
        (0..n).fold(self.sign, |acc, i| acc * self.packed.get(i, i))
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Solves `A·X = B`; fails when the factorization hit a zero pivot.
    pub fn solve(&self, b: &Mat<T>) -> Result<Mat<T>> {
        let n = self.packed.rows();
        if b.rows() != n {
            return Err(Error::Shape { op: "lu_solve", left: self.packed.shape(), right: b.shape() });
        }
        if self.singular {
            return Err(Error::invalid("lu_solve on singular matrix"));
        }
        let m = b.cols();
        let mut x = b.select_rows(&self.perm);
        for c in 0..m {
            for i in 0..n {
                let mut acc = x.get(i, c);
                for k in 0..i {
                    acc -= self.packed.get(i, k) * x.get(k, c);
                }
                x.set(i, c, acc);
            }
            for i in (0..n).rev() {
                let mut acc = x.get(i, c);
                for k in i + 1..n {
                    acc -= self.packed.get(i, k) * x.get(k, c);
                }
                x.set(i, c, acc / self.packed.get(i, i));
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Mat<T>> {
        self.solve(&Mat::identity(self.packed.rows()))
    }
}

/// Determinant via LU with partial pivoting; singular input gives zero.
pub fn lu_det<T: Scalar>(a: &Mat<T>) -> Result<T> {
    Ok(Lu::new(a)?.det())
}

/// True when `a` is symmetric and admits a Cholesky factorization.
pub fn is_positive_definite<T: Scalar>(a: &Mat<T>) -> bool {
    if !a.is_symmetric(T::tol(SYMMETRY_TOL)) {
        return false;
    }
    let n = a.rows();
    let mut l = Mat::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    true
}

/// Standard normal `rows × cols` matrix drawn in row-major order.
pub fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat<T> {
    Mat::from_fn(rows, cols, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Orthogonal factor of a seeded Gaussian matrix (modified Gram-Schmidt with
/// one reorthogonalization pass, signs fixed so `diag(R) > 0`).
pub fn random_orthogonal<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat<T> {
    loop {
        let g: Mat<T> = gaussian_matrix(dim, dim, rng);
        if let Some(q) = orthonormalize_columns(&g) {
            return q;
        }
    }
}

fn orthonormalize_columns<T: Scalar>(a: &Mat<T>) -> Option<Mat<T>> {
    let (n, m) = a.shape();
    let mut cols: Vec<Vec<T>> = (0..m).map(|c| a.col(c)).collect();
    for j in 0..m {
        for _ in 0..2 {
            for i in 0..j {
                let dot: T = (0..n).map(|k| cols[i][k] * cols[j][k]).sum();
                for k in 0..n {
                    let v = cols[j][k] - dot * cols[i][k];
                    cols[j][k] = v;
                }
            }
        }
        let norm = cols[j].iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm > T::tol(1e-10)) {
            return None;
        }
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    Some(Mat::from_fn(n, m, |r, c| cols[c][r]))
}

/// Seeded SPD matrix with eigenvalues log-spaced in `[1/condition_number, 1]`.
pub fn random_spd<T: Scalar>(dim: usize, condition_number: f64, seed: u64) -> Result<Mat<T>> {
    if dim == 0 {
        return Err(Error::invalid("random_spd: dim must be >= 1"));
    }
    if !(condition_number >= 1.0) || !condition_number.is_finite() {
        return Err(Error::invalid(format!(
            "random_spd: condition number must be finite and >= 1, got {condition_number}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q: Mat<T> = random_orthogonal(dim, &mut rng);
    let eigenvalues: Vec<T> = (0..dim)
        .map(|i| {
            if dim == 1 {
                T::one()
            } else {
                T::lit(condition_number.powf(-(i as f64) / (dim - 1) as f64))
            }
        })
        .collect();
    Ok(EigenDecomposition { eigenvalues, eigenvectors: q }.reconstruct())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_product(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a[(i, k)] * b[(k, j)];
            }
            s
        })
    }

    fn cofactor_det(a: &Mat<f64>) -> f64 {
        let n = a.rows();
        if n == 1 {
            return a[(0, 0)];
        }
        (0..n)
            .map(|c| {
                let keep: Vec<usize> = (0..n).filter(|&k| k != c).collect();
                let minor = a.select_rows(&(1..n).collect::<Vec<_>>()).select_cols(&keep);
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[(0, c)] * cofactor_det(&minor)
            })
            .sum()
    }

    #[test]
    fn gemm_identity_and_row_column() {
        let m = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(gemm(&Mat::identity(2), &m).unwrap(), m);
        let r = gemm(&Mat::from_rows(&[[1.0, 2.0]]), &Mat::from_rows(&[[3.0], [4.0]])).unwrap();
        assert_eq!(r.as_scalar(), Some(11.0));
    }

    #[test]
    fn gemm_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Mat<f64> = gaussian_matrix(8, 8, &mut rng);
        let b: Mat<f64> = gaussian_matrix(8, 8, &mut rng);
        let d = frobenius_distance(&gemm(&a, &b).unwrap(), &naive_product(&a, &b)).unwrap();
        assert!(d <= 1e-12, "{d}");
    }

    #[test]
    fn gemm_shape_error_names_shapes() {
        let err = gemm(&Mat::<f64>::zeros(2, 3), &Mat::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("gemm"), "{msg}");
    }

    #[test]
    fn eig_of_diagonal_and_two_by_two() {
        let e = sym_eig(&Mat::diag(&[3.0f64, 1.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors, Mat::identity(2));

        let e = sym_eig(&Mat::from_rows(&[[2.0f64, 1.0], [1.0, 2.0]])).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_spd() {
        let a: Mat<f64> = random_spd(6, 30.0, 5).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!(frobenius_distance(&e.reconstruct(), &a).unwrap() <= 1e-10);
        let vtv = gemm(&e.eigenvectors.transpose(), &e.eigenvectors).unwrap();
        assert!(frobenius_distance(&vtv, &Mat::identity(6)).unwrap() <= 1e-8);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let err = sym_eig(&Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn det_small_cases() {
        assert_eq!(lu_det(&Mat::<f64>::identity(3)).unwrap(), 1.0);
        assert_eq!(lu_det(&Mat::diag(&[4.0, 4.0])).unwrap(), 16.0);
        assert_eq!(lu_det(&Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0]])).unwrap(), 0.0);
        // one row swap flips the sign
        assert_eq!(lu_det(&Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap(), -1.0);
    }

    #[test]
    fn det_matches_cofactor_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a: Mat<f64> = gaussian_matrix(5, 5, &mut rng);
            let want = cofactor_det(&a);
            let got = lu_det(&a).unwrap();
            assert!((got - want).abs() <= 1e-10 * want.abs(), "{got} vs {want}");
        }
    }

    #[test]
    fn lu_inverse_roundtrip() {
        let a: Mat<f64> = random_spd(5, 20.0, 2).unwrap();
        let inv = Lu::new(&a).unwrap().inverse().unwrap();
        let prod = gemm(&a, &inv).unwrap();
        assert!(frobenius_distance(&prod, &Mat::identity(5)).unwrap() < 1e-12);
    }

    #[test]
    fn frobenius_examples() {
        let a = Mat::from_rows(&[[1.0f64, -2.0], [0.5, 3.0]]);
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        let d = frobenius_distance(&Mat::<f64>::identity(2), &Mat::zeros(2, 2)).unwrap();
        assert_eq!(d, 2f64.sqrt());
        let d = frobenius_distance(&Mat::diag(&[3.0f64, 0.0]), &Mat::diag(&[0.0, 4.0])).unwrap();
        assert_eq!(d, 5.0);
        assert!(frobenius_distance(&Mat::<f64>::zeros(2, 2), &Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn random_spd_fixtures() {
        assert_eq!(random_spd::<f64>(1, 1.0, 99).unwrap(), Mat::scalar(1.0));
        let a: Mat<f64> = random_spd(4, 10.0, 7).unwrap();
        let e = sym_eig(&a).unwrap();
        let ratio = e.eigenvalues[0] / e.eigenvalues[3];
        assert!((ratio - 10.0).abs() <= 1e-8, "{ratio}");
        for seed in 0..5 {
            let a: Mat<f64> = random_spd(5, 3.0, seed).unwrap();
            assert_eq!(a.asymmetry().unwrap(), 0.0);
        }
        assert!(random_spd::<f64>(0, 2.0, 1).is_err());
        assert!(random_spd::<f64>(3, 0.5, 1).is_err());
    }

    #[test]
    fn single_precision_path() {
        let a: Mat<f32> = random_spd(4, 5.0, 1).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!(frobenius_distance(&e.reconstruct(), &a).unwrap() < 1e-5);
        assert!(is_positive_definite(&a));
    }
}
