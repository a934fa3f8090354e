//! Dense real-matrix kernels sized for small control problems.
//!
//! Everything here is a pure function of its inputs. Matrices are stored
//! row-major and validated finite on construction; arithmetic operators
//! panic on shape mismatch (like `ndarray`), while the solver entry points
//! validate shapes and return [`Error`]s.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State dimension above which the Lyapunov solver leaves the Kronecker system
/// and falls back to a doubling fixed-point iteration.
pub const KRONECKER_MAX_DIM: usize = 20;

const QR_MAX_ITERATIONS: usize = 60;
const DARE_TOLERANCE: f64 = 1e-12;
const DARE_MAX_ITERATIONS: usize = 1_000_000;
const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting empty shapes and
    /// non-finite values.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "from_row_slice",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            rows,
            cols,
            data: data.to_vec(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::DimensionMismatch {
                context: "ragged rows",
                left: (n, m),
                right: (n, bad.len()),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(n, m, &flat)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Column vector (n x 1).
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::from_row_slice(values.len(), 1, values)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_dot(self).sqrt()
    }

    /// Frobenius inner product `tr(selfᵀ other)`.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "frobenius_dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrize(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = 1.0 + self.frobenius_norm();
        self.max_abs_diff(&self.transpose()) <= rel_tol * scale
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "mat_vec shape mismatch");
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `xᵀ self x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mat_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Lower Cholesky factor, or `None` if the matrix is not numerically
    /// positive definite. Only the lower triangle is read.
    pub fn cholesky(&self) -> Option<Matrix> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    /// Lower factor `L` with `L Lᵀ = self` for symmetric positive
    /// semidefinite input; pivots below `tol` are treated as zero.
    pub fn psd_factor(&self, tol: f64) -> Option<Matrix> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d < -tol {
                return None;
            }
            if d <= tol {
                for i in j + 1..n {
                    let mut s = self[(i, j)];
                    for k in 0..j {
                        s -= l[(i, k)] * l[(j, k)];
                    }
                    if s.abs() > tol.sqrt() {
                        return None;
                    }
                }
                continue;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    /// Solves `self X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let lu = Lu::factor(self)?;
        lu.solve_matrix(rhs)
    }

    fn check_same_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                context,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{:?}", self.to_rows())
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = f.precision().unwrap_or(6);
        for (i, row) in self.data.chunks(self.cols).enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "[")?;
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v:.prec$}")?;
            }
            write!(f, "]")?;
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&Matrix> for Matrix {
    fn sub_assign(&mut self, rhs: &Matrix) {
        self.axpy(-1.0, rhs);
    }
}

impl Neg for &Matrix {
    type Output = Matrix;

    fn neg(self) -> Matrix {
        self.map(|v| -v)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

impl Lu {
    pub fn factor(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NonSquare {
                rows: m.rows,
                cols: m.cols,
            });
        }
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut pivots = vec![0; n];
        let scale = m.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= f64::EPSILON * scale * n as f64 || pmax == 0.0 {
                return Err(Error::Singular);
            }
            pivots[k] = p;
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, pivots })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.pivots[k]);
        }
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, x)| l * x).sum();
            b[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&b[i + 1..]).map(|(u, x)| u * x).sum();
            b[i] = (b[i] - s) / self.lu[i * n + i];
        }
    }

    pub fn solve_matrix(&self, rhs: &Matrix) -> Result<Matrix> {
        if rhs.rows != self.n {
            return Err(Error::DimensionMismatch {
                context: "lu solve",
                left: (self.n, self.n),
                right: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(rhs.rows, rhs.cols);
        let mut col = vec![0.0; self.n];
        for j in 0..rhs.cols {
            for i in 0..self.n {
                col[i] = rhs[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..self.n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }
}

/// Complex eigenvalue as `(re, im)`.
pub type Eigenvalue = (f64, f64);

/// All eigenvalues of a square matrix: Householder reduction to upper
/// Hessenberg form, then Francis double-shift QR with 2x2 trailing blocks
/// resolved in closed form.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Eigenvalue>> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut h = m.clone();
    reduce_to_hessenberg(&mut h);
    hessenberg_qr(&h)
}

/// Maximum eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

fn reduce_to_hessenberg(a: &mut Matrix) {
    let n = a.rows;
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let norm: f64 = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[(k + 1, k)] > 0.0 { -norm } else { norm };
        for i in 0..n {
            v[i] = if i > k { a[(i, k)] } else { 0.0 };
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = v[k + 1..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- (I - 2vvᵀ/vᵀv) A (I - 2vvᵀ/vᵀv)
        for j in 0..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k + 1..n {
                a[(i, j)] -= s * v[i];
            }
        }
        for i in 0..n {
            let s: f64 = (k + 1..n).map(|j| a[(i, j)] * v[j]).sum::<f64>() * 2.0 / vnorm2;
            for j in k + 1..n {
                a[(i, j)] -= s * v[j];
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
/// Indices inside are 1-based to follow the classical EISPACK `hqr` layout.
fn hessenberg_qr(h: &Matrix) -> Result<Vec<Eigenvalue>> {
    let n = h.rows;
    let w = n + 1;
    let mut a = vec![0.0; w * w];
    for i in 0..n {
        for j in 0..n {
            a[(i + 1) * w + j + 1] = h[(i, j)];
        }
    }
    let at = |i: usize, j: usize| i * w + j;
    let mut wr = vec![0.0; w];
    let mut wi = vec![0.0; w];

    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[at(i, j)].abs();
        }
    }

    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z);
    let (mut s, mut ww);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = 1;
            for ll in (2..=nn).rev() {
                s = a[at(ll - 1, ll - 1)].abs() + a[at(ll, ll)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[at(ll, ll - 1)].abs() + s == s {
                    a[at(ll, ll - 1)] = 0.0;
                    l = ll;
                    break;
                }
            }
            x = a[at(nn, nn)];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                y = a[at(nn - 1, nn - 1)];
                ww = a[at(nn, nn - 1)] * a[at(nn - 1, nn)];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + ww;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - ww / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == QR_MAX_ITERATIONS {
                        return Err(Error::NumericalFailure(
                            "QR eigenvalue iteration did not converge".into(),
                        ));
                    }
                    if its > 0 && its % 10 == 0 {
                        // exceptional shift
                        t += x;
                        for i in 1..=nn {
                            a[at(i, i)] -= x;
                        }
                        s = a[at(nn, nn - 1)].abs() + a[at(nn - 1, nn - 2)].abs();
                        x = 0.75 * s;
                        y = x;
                        ww = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = a[at(m, m)];
                        r = x - z;
                        s = y - z;
                        p = (r * s - ww) / a[at(m + 1, m)] + a[at(m, m + 1)];
                        q = a[at(m + 1, m + 1)] - z - r - s;
                        r = a[at(m + 2, m + 1)];
                        s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[at(m, m - 1)].abs() * (q.abs() + r.abs());
                        let v = p.abs()
                            * (a[at(m - 1, m - 1)].abs() + z.abs() + a[at(m + 1, m + 1)].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a[at(i, i - 2)] = 0.0;
                        if i != m + 2 {
                            a[at(i, i - 3)] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a[at(k, k - 1)];
                            q = a[at(k + 1, k - 1)];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[at(k + 2, k - 1)];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[at(k, k - 1)] = -a[at(k, k - 1)];
                                }
                            } else {
                                a[at(k, k - 1)] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a[at(k, j)] + q * a[at(k + 1, j)];
                                if k != nn - 1 {
                                    p += r * a[at(k + 2, j)];
                                    a[at(k + 2, j)] -= p * z;
                                }
                                a[at(k + 1, j)] -= p * y;
                                a[at(k, j)] -= p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                p = x * a[at(i, k)] + y * a[at(i, k + 1)];
                                if k != nn - 1 {
                                    p += z * a[at(i, k + 2)];
                                    a[at(i, k + 2)] -= p * r;
                                }
                                a[at(i, k + 1)] -= p * q;
                                a[at(i, k)] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| (wr[i], wi[i])).collect())
}

/// `‖P − W − MᵀPM‖_F`.
pub fn lyapunov_residual(m: &Matrix, w: &Matrix, p: &Matrix) -> f64 {
    let mtpm = &(&m.transpose() * p) * m;
    (&(p - w) - &mtpm).frobenius_norm()
}

/// Solves the discrete Lyapunov equation `P = W + MᵀPM` for Schur-stable `M`.
///
/// Up to [`KRONECKER_MAX_DIM`] the vectorized system `(I − Mᵀ⊗Mᵀ) vec P = vec W`
/// is solved directly with two rounds of iterative refinement; above that a
/// doubling fixed-point iteration is used. The output is symmetrized.
pub fn solve_discrete_lyapunov(m: &Matrix, w: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    m.check_same_shape(w, "lyapunov")?;
    if !w.is_symmetric(1e-10) {
        return Err(Error::NumericalFailure("Lyapunov right-hand side is not symmetric".into()));
    }
    let rho = spectral_radius(m)?;
    if rho >= 1.0 {
        return Err(Error::UnstableArgument {
            spectral_radius: rho,
        });
    }
    let p = if m.rows <= KRONECKER_MAX_DIM {
        lyapunov_kronecker(m, w)?
    } else {
        lyapunov_doubling(m, w)?
    };
    let p = p.symmetrize();
    let residual = lyapunov_residual(m, w, &p);
    if !p.is_finite() || residual > RESIDUAL_TOLERANCE * (1.0 + p.frobenius_norm()) {
        return Err(Error::NumericalFailure(format!(
            "Lyapunov residual {residual:.3e} above tolerance"
        )));
    }
    Ok(p)
}

fn lyapunov_kronecker(m: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = m.rows;
    let nn = n * n;
    // Row (i, j) of the lifted operator: P[i,j] − Σ_{k,l} M[k,i] M[l,j] P[k,l].
    let mut op = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                let mki = m[(k, i)];
                if mki == 0.0 {
                    continue;
                }
                for l in 0..n {
                    op[(row, k * n + l)] -= mki * m[(l, j)];
                }
            }
            op[(row, row)] += 1.0;
        }
    }
    let lu = Lu::factor(&op)?;
    let mut x = w.data.clone();
    lu.solve_in_place(&mut x);
    let mut p = Matrix {
        rows: n,
        cols: n,
        data: x,
    };
    let mt = m.transpose();
    for _ in 0..2 {
        // r = W − (P − MᵀPM)
        let mut r = &(w + &(&(&mt * &p) * m)) - &p;
        if r.frobenius_norm() == 0.0 {
            break;
        }
        lu.solve_in_place(&mut r.data);
        p += &r;
    }
    Ok(p)
}

fn lyapunov_doubling(m: &Matrix, w: &Matrix) -> Result<Matrix> {
    // P_{k+1} = P_k + Φ_kᵀ P_k Φ_k, Φ_{k+1} = Φ_k², converging to Σ (Mᵀ)^j W M^j.
    let mut p = w.clone();
    let mut phi = m.clone();
    for _ in 0..200 {
        let inc = &(&phi.transpose() * &p) * &phi;
        p += &inc;
        phi = &phi * &phi;
        if inc.frobenius_norm() <= 1e-16 * (1.0 + p.frobenius_norm()) {
            return Ok(p);
        }
        if !p.is_finite() {
            break;
        }
    }
    Err(Error::NumericalFailure("Lyapunov doubling iteration did not converge".into()))
}

/// Residual of the discrete algebraic Riccati equation
/// `‖Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA − P‖_F`.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    Ok((&riccati_step(a, b, q, r, p)? - p).frobenius_norm())
}

fn riccati_step(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let at = a.transpose();
    let bt = b.transpose();
    let pa = p * a;
    let btpa = &bt * &pa;
    let gram = r + &(&(&bt * p) * b);
    let gain = gram.solve(&btpa)?;
    let atpa = &at * &pa;
    let correction = &(&at * &(p * b)) * &gain;
    Ok((&(q + &atpa) - &correction).symmetrize())
}

/// `(R + BᵀPB)⁻¹ BᵀPA`, the gain for the `u = −Kx` convention.
pub fn riccati_gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let bt = b.transpose();
    let gram = r + &(&(&bt * p) * b);
    gram.solve(&(&(&bt * p) * a))
}

/// Stabilizing solution of the discrete algebraic Riccati equation and the
/// associated optimal gain `K* = (R + BᵀPB)⁻¹BᵀPA` (policy `u = −K*x`).
///
/// Runs Riccati value iteration from `P = Q` to a relative step of `1e-12`,
/// then polishes with Hewer policy-iteration steps while they reduce the
/// residual.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = a.rows;
    let m = b.cols;
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if b.rows != n {
        return Err(Error::DimensionMismatch {
            context: "solve_dare B",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if q.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "solve_dare Q",
            left: a.shape(),
            right: q.shape(),
        });
    }
    if r.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            context: "solve_dare R",
            left: (m, m),
            right: r.shape(),
        });
    }

    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..DARE_MAX_ITERATIONS {
        let next = riccati_step(a, b, q, r, &p)?;
        if !next.is_finite() || next.frobenius_norm() > 1e150 {
            return Err(Error::NotStabilizable("Riccati iteration diverged".into()));
        }
        let delta = (&next - &p).frobenius_norm();
        p = next;
        if delta <= DARE_TOLERANCE * (1.0 + p.frobenius_norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable(
            "Riccati iteration hit the iteration cap".into(),
        ));
    }

    let mut k = riccati_gain(a, b, r, &p)?;
    let mut residual = dare_residual(a, b, q, r, &p)?;
    for _ in 0..8 {
        let closed = a - &(b * &k);
        let weight = (q + &(&(&k.transpose() * r) * &k)).symmetrize();
        let Ok(p_next) = solve_discrete_lyapunov(&closed, &weight) else {
            break;
        };
        let res_next = dare_residual(a, b, q, r, &p_next)?;
        if !(res_next < residual) {
            break;
        }
        p = p_next;
        residual = res_next;
        k = riccati_gain(a, b, r, &p)?;
    }

    let rho = spectral_radius(&(a - &(b * &k)))?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizable(format!(
            "closed loop under the Riccati gain has spectral radius {rho}"
        )));
    }
    if residual > RESIDUAL_TOLERANCE * (1.0 + p.frobenius_norm()) {
        return Err(Error::NumericalFailure(format!(
            "DARE residual {residual:.3e} above tolerance"
        )));
    }
    Ok((p, k))
}
