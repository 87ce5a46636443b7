//! Dense complex matrices and the decompositions the detectors need.
//!
//! Everything here is deterministic: Householder reflections for LQ and
//! orthogonal complements, Cholesky for Hermitian PD matrices, cyclic
//! Jacobi for Hermitian eigenvalues and one-sided (Hestenes) Jacobi for
//! singular value decompositions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{param_err, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Default relative rank tolerance.
pub const DEFAULT_RTOL: f64 = 1e-10;

pub(crate) fn cabs(z: Complex64) -> f64 {
    libm::hypot(z.re, z.im)
}

/// Unit-modulus phase of `z`, or 1 for `z == 0`.
fn phase(z: Complex64) -> Complex64 {
    let r = cabs(z);
    if r == 0.0 {
        ONE
    } else {
        z / r
    }
}

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(param_err!("{} entries cannot fill a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Real matrix from nested rows (test and example convenience).
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| Complex64::new(rows[i][j], 0.0))
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { Complex64::new(values[i], 0.0) } else { ZERO })
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

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[Complex64]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|z| z.norm_sqr()).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| cabs(*z)).fold(0.0, f64::max)
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(param_err!("shape mismatch: {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(param_err!("cannot multiply {:?} by {:?}", self.shape(), rhs.shape()));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, a) in self.row(i).iter().enumerate() {
                if *a == ZERO {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^H * rhs` without forming the adjoint.
    pub fn adjoint_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(param_err!("cannot multiply adjoint of {:?} by {:?}", self.shape(), rhs.shape()));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let rrow = rhs.row(k);
            for (i, a) in self.row(k).iter().enumerate() {
                if *a == ZERO {
                    continue;
                }
                let a = a.conj();
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix `self * self^H`.
    pub fn gram(&self) -> Self {
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: Complex64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b.conj()).sum();
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        out
    }

    pub fn matvec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols {
            return Err(param_err!("vector of length {} does not match {:?}", x.len(), self.shape()));
        }
        Ok((0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect())
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: core::ops::Range<usize>) -> Self {
        let start = range.start;
        Self::from_fn(self.rows, range.len(), |i, j| self[(i, start + j)])
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(param_err!("cannot stack {:?} beside {:?}", self.shape(), other.shape()));
        }
        Ok(Self::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        }))
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..=i {
                worst = worst.max(cabs(self[(i, j)] - self[(j, i)].conj()));
            }
        }
        worst
    }

    fn check_hermitian(&self, what: &str) -> Result<()> {
        if self.rows != self.cols {
            return Err(param_err!("{what}: matrix must be square, got {:?}", self.shape()));
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        if self.hermitian_defect() > 1e-10 * scale {
            return Err(param_err!("{what}: matrix is not Hermitian"));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Householder reflector `H = I - tau v v^H` with `H x = alpha e_1`.
struct Reflector {
    v: Vec<Complex64>,
    tau: f64,
    alpha: Complex64,
}

fn reflector(x: &[Complex64]) -> Reflector {
    let norm = libm::sqrt(x.iter().map(|z| z.norm_sqr()).sum());
    if norm == 0.0 {
        return Reflector { v: vec![ZERO; x.len()], tau: 0.0, alpha: ZERO };
    }
    let alpha = -phase(x[0]) * norm;
    let mut v = x.to_vec();
    v[0] -= alpha;
    let vnorm2 = 2.0 * norm * (norm + cabs(x[0]));
    Reflector { v, tau: 2.0 / vnorm2, alpha }
}

/// `X = L * Q` with `L` lower triangular (real nonnegative diagonal) and
/// `Q` having orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LqFactorization {
    /// `m x m` lower-triangular factor.
    pub lower: ComplexMatrix,
    /// Thin `m x n` factor with orthonormal rows.
    pub ortho_rows: ComplexMatrix,
}

fn lq_reduce(x: &ComplexMatrix) -> Result<(ComplexMatrix, Vec<Reflector>)> {
    let (m, n) = x.shape();
    if m == 0 || m > n {
        return Err(param_err!("LQ needs 0 < rows <= cols, got {m}x{n}"));
    }
    if !x.is_finite() {
        return Err(param_err!("LQ input contains non-finite entries"));
    }
    let mut w = x.clone();
    let mut reflectors = Vec::with_capacity(m);
    for i in 0..m {
        let h = reflector(&w.row(i)[i..]);
        if h.tau != 0.0 {
            for r in i + 1..m {
                let row = &mut w.row_mut(r)[i..];
                let s: Complex64 = row.iter().zip(&h.v).map(|(y, v)| y * v.conj()).sum();
                let s = s * h.tau;
                for (y, v) in row.iter_mut().zip(&h.v) {
                    *y -= s * v;
                }
            }
        }
        let row = w.row_mut(i);
        row[i] = h.alpha;
        for z in &mut row[i + 1..] {
            *z = ZERO;
        }
        reflectors.push(h);
    }
    // Rotate column phases so the diagonal is real and nonnegative.
    let mut lower = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            lower[(i, j)] = w[(i, j)];
        }
    }
    for (j, h) in reflectors.iter().enumerate() {
        let ph = phase(h.alpha).conj();
        for i in j..m {
            lower[(i, j)] *= ph;
        }
        lower[(j, j)] = Complex64::new(cabs(h.alpha), 0.0);
    }
    Ok((lower, reflectors))
}

/// Full LQ factorization of an `m x n` matrix with `m <= n`.
pub fn lq_decompose(x: &ComplexMatrix) -> Result<LqFactorization> {
    let (m, n) = x.shape();
    let (lower, reflectors) = lq_reduce(x)?;
    let mut q = ComplexMatrix::zeros(m, n);
    for r in 0..m {
        let row = q.row_mut(r);
        row[r] = ONE;
        for (i, h) in reflectors.iter().enumerate().rev() {
            let seg = &mut row[i..];
            let s: Complex64 = seg.iter().zip(&h.v).map(|(y, v)| y * v.conj()).sum();
            let s = s * h.tau;
            for (y, v) in seg.iter_mut().zip(&h.v) {
                *y -= s * v;
            }
        }
        let ph = phase(reflectors[r].alpha);
        for z in row.iter_mut() {
            *z *= ph;
        }
    }
    Ok(LqFactorization { lower, ortho_rows: q })
}

/// Lower-triangular LQ factor only; `O(m^2 n)`.
pub fn lq_lower(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    lq_reduce(x).map(|(lower, _)| lower)
}

/// Diagonal of the LQ factor, the only part the fast statistic reads.
pub fn lq_diagonal(x: &ComplexMatrix) -> Result<Vec<f64>> {
    let (_, reflectors) = lq_reduce(x)?;
    Ok(reflectors.iter().map(|h| cabs(h.alpha)).collect())
}

/// Cholesky factor `P` (lower, positive real diagonal) with `P P^H = H`.
pub fn cholesky_lower(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    h.check_hermitian("cholesky")?;
    let n = h.rows();
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = h[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NumericalDomain(format!("matrix is not positive definite (pivot {j} = {d:e})")));
        }
        let djj = libm::sqrt(d);
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = l.rows();
    if l.cols() != n || b.rows() != n {
        return Err(param_err!("triangular solve shape mismatch {:?} / {:?}", l.shape(), b.shape()));
    }
    let mut x = b.clone();
    let cols = b.cols();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == ZERO {
                continue;
            }
            for c in 0..cols {
                let v = x[(k, c)];
                x[(i, c)] -= lik * v;
            }
        }
        let d = l[(i, i)];
        if d == ZERO {
            return Err(Error::NumericalDomain(format!("zero pivot at {i} in triangular solve")));
        }
        for c in 0..cols {
            x[(i, c)] /= d;
        }
    }
    Ok(x)
}

/// Solves `L^H X = B` for lower-triangular `L`.
pub fn solve_lower_adjoint(l: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = l.rows();
    if l.cols() != n || b.rows() != n {
        return Err(param_err!("triangular solve shape mismatch {:?} / {:?}", l.shape(), b.shape()));
    }
    let mut x = b.clone();
    let cols = b.cols();
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[(k, i)].conj();
            if lki == ZERO {
                continue;
            }
            for c in 0..cols {
                let v = x[(k, c)];
                x[(i, c)] -= lki * v;
            }
        }
        let d = l[(i, i)].conj();
        if d == ZERO {
            return Err(Error::NumericalDomain(format!("zero pivot at {i} in triangular solve")));
        }
        for c in 0..cols {
            x[(i, c)] /= d;
        }
    }
    Ok(x)
}

/// Eigenvalues of a Hermitian matrix, sorted in decreasing order.
///
/// Cyclic complex Jacobi; each rotation first removes the phase of the
/// pivot entry and then applies a real plane rotation.
pub fn hermitian_eigenvalues(h: &ComplexMatrix) -> Result<Vec<f64>> {
    h.check_hermitian("eigenvalues")?;
    let n = h.rows();
    let mut a = h.clone();
    // Symmetrize exactly so the iteration stays Hermitian.
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in 0..i {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
    let total = a.frobenius_norm();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += a[(i, j)].norm_sqr();
            }
        }
        if libm::sqrt(2.0 * off) <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let g = cabs(apq);
                if g == 0.0 || g <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Skip negligible entries once they cannot move the diagonal.
                if g < f64::EPSILON * 1e-3 * (libm::fabs(app) + libm::fabs(aqq)) {
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    continue;
                }
                let (c, s) = jacobi_cs(app, aqq, g);
                let e = apq / g; // e^{i phi}
                let se = e * s; // s e^{i phi}
                // Columns: A <- A J with J = [[c, s e],[-s conj(e), c]].
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c - akq * se.conj();
                    a[(k, q)] = akp * se + akq * c;
                }
                // Rows: A <- J^H A.
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c - aqk * se;
                    a[(q, k)] = apk * se.conj() + aqk * c;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    Ok(ev)
}

/// Rotation zeroing the off-diagonal `g > 0` of `[[app, g],[g, aqq]]`.
fn jacobi_cs(app: f64, aqq: f64, g: f64) -> (f64, f64) {
    let zeta = (aqq - app) / (2.0 * g);
    let t = if zeta >= 0.0 {
        1.0 / (zeta + libm::sqrt(1.0 + zeta * zeta))
    } else {
        -1.0 / (-zeta + libm::sqrt(1.0 + zeta * zeta))
    };
    let c = 1.0 / libm::sqrt(1.0 + t * t);
    (c, t * c)
}

/// Thin singular value decomposition `X = U diag(sigma) V^H` of a tall
/// matrix, singular values in decreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: ComplexMatrix,
    pub sigma: Vec<f64>,
    pub v: ComplexMatrix,
}

/// One-sided Jacobi SVD of an `n x d` matrix with `n >= d`.
///
/// Columns whose singular value is exactly zero get a zero `u` column.
pub fn thin_svd(x: &ComplexMatrix) -> Result<ThinSvd> {
    let (n, d) = x.shape();
    if d == 0 || n < d {
        return Err(param_err!("thin SVD needs rows >= cols > 0, got {n}x{d}"));
    }
    if !x.is_finite() {
        return Err(param_err!("SVD input contains non-finite entries"));
    }
    // Column-major working copies.
    let mut cols: Vec<Vec<Complex64>> = (0..d).map(|j| x.column(j)).collect();
    let mut vcols: Vec<Vec<Complex64>> = (0..d)
        .map(|j| {
            let mut e = vec![ZERO; d];
            e[j] = ONE;
            e
        })
        .collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let alpha: f64 = cols[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: Complex64 = cols[p].iter().zip(&cols[q]).map(|(a, b)| a.conj() * b).sum();
                let g = cabs(gamma);
                if g == 0.0 || g <= 1e-15 * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let (c, s) = jacobi_cs(alpha, beta, g);
                let se = (gamma / g) * s;
                for m in [&mut cols, &mut vcols] {
                    let (lo, hi) = m.split_at_mut(q);
                    for (a, b) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (ap, aq) = (*a, *b);
                        *a = ap * c - aq * se.conj();
                        *b = ap * se + aq * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, f64)> =
        cols.iter().map(|c| libm::sqrt(c.iter().map(|z| z.norm_sqr()).sum::<f64>())).enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut u = ComplexMatrix::zeros(n, d);
    let mut v = ComplexMatrix::zeros(d, d);
    let mut sigma = Vec::with_capacity(d);
    for (dst, (src, s)) in order.into_iter().enumerate() {
        sigma.push(s);
        if s > 0.0 {
            for i in 0..n {
                u[(i, dst)] = cols[src][i] / s;
            }
        }
        for i in 0..d {
            v[(i, dst)] = vcols[src][i];
        }
    }
    Ok(ThinSvd { u, sigma, v })
}

/// Singular values of any matrix, decreasing.
pub fn singular_values(x: &ComplexMatrix) -> Result<Vec<f64>> {
    if x.rows() >= x.cols() {
        thin_svd(x).map(|s| s.sigma)
    } else {
        thin_svd(&x.adjoint()).map(|s| s.sigma)
    }
}

fn check_full_column_rank(sigma: &[f64], what: &str) -> Result<()> {
    let largest = sigma.first().copied().unwrap_or(0.0);
    let smallest = sigma.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || smallest < 1e-10 * largest {
        return Err(Error::DegenerateCode(format!(
            "{what}: not full column rank (sigma_min / sigma_max = {:e})",
            if largest > 0.0 { smallest / largest } else { 0.0 }
        )));
    }
    Ok(())
}

/// Orthonormal bases for the range of `C` and its orthogonal complement.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    /// `n x d`: left singular vectors of `C`.
    pub u: ComplexMatrix,
    /// `n x (n - d)`: complement of `range(C)`.
    pub u_perp: ComplexMatrix,
    /// `[U_perp, U]`, unitary; `Ubar^H C C^+ Ubar = diag(0_{n-d}, I_d)`.
    pub ubar: ComplexMatrix,
}

/// Splits `C^n` into `range(C)` and its complement, complement first.
pub fn orthobasis_split(c: &ComplexMatrix) -> Result<OrthoBasis> {
    let (n, d) = c.shape();
    if d == 0 || d >= n {
        return Err(param_err!("orthobasis split needs 0 < d < n, got {n}x{d}"));
    }
    let svd = thin_svd(c)?;
    check_full_column_rank(&svd.sigma, "orthobasis split")?;
    let u = svd.u;
    let u_perp = orthogonal_complement(&u);
    let ubar = u_perp.hstack(&u)?;
    Ok(OrthoBasis { u, u_perp, ubar })
}

/// Orthonormal basis of the complement of the span of orthonormal columns `u`.
fn orthogonal_complement(u: &ComplexMatrix) -> ComplexMatrix {
    let (n, d) = u.shape();
    // Householder QR of U; the trailing columns of the accumulated Q span
    // the complement.
    let mut work: Vec<Vec<Complex64>> = (0..d).map(|j| u.column(j)).collect();
    let mut refl = Vec::with_capacity(d);
    for j in 0..d {
        let h = reflector(&work[j][j..]);
        for col in work.iter_mut().skip(j + 1) {
            apply_reflector(&h, &mut col[j..]);
        }
        refl.push(h);
    }
    let mut out = ComplexMatrix::zeros(n, n - d);
    for (c, k) in (d..n).enumerate() {
        let mut e = vec![ZERO; n];
        e[k] = ONE;
        for (j, h) in refl.iter().enumerate().rev() {
            apply_reflector(h, &mut e[j..]);
        }
        out.set_column(c, &e);
    }
    out
}

/// `x <- (I - tau v v^H) x`.
fn apply_reflector(h: &Reflector, x: &mut [Complex64]) {
    if h.tau == 0.0 {
        return;
    }
    let s: Complex64 = h.v.iter().zip(x.iter()).map(|(v, y)| v.conj() * y).sum();
    let s = s * h.tau;
    for (y, v) in x.iter_mut().zip(&h.v) {
        *y -= s * v;
    }
}

/// Moore-Penrose pseudo-inverse `(C^H C)^{-1} C^H` of a full-column-rank `C`.
pub fn pinv(c: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (n, d) = c.shape();
    if d == 0 || d > n {
        return Err(param_err!("pinv needs a tall matrix, got {n}x{d}"));
    }
    check_full_column_rank(&thin_svd(c)?.sigma, "pinv")?;
    let gram = c.adjoint_matmul(c)?;
    let l = cholesky_lower(&gram).map_err(|e| Error::DegenerateCode(format!("pinv: {e}")))?;
    let y = solve_lower(&l, &c.adjoint())?;
    solve_lower_adjoint(&l, &y)
}

/// Natural log of the pseudo-determinant of a Hermitian PSD matrix.
///
/// With `rank_hint = Some(r)` the `r` largest eigenvalues are multiplied
/// (all of them must be positive); otherwise every eigenvalue above
/// `rtol * lambda_max`. An empty product is 1 (log 0).
pub fn log_pdet(h: &ComplexMatrix, rank_hint: Option<usize>, rtol: f64) -> Result<f64> {
    let ev = hermitian_eigenvalues(h)?;
    let lmax = ev.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&lmin) = ev.last() {
        if lmin < -rtol * lmax {
            return Err(Error::NumericalDomain(format!(
                "matrix is not PSD (eigenvalue {lmin:e} against lambda_max {lmax:e})"
            )));
        }
    }
    let selected: &[f64] = match rank_hint {
        Some(r) => {
            if r > ev.len() {
                return Err(param_err!("rank hint {r} exceeds dimension {}", ev.len()));
            }
            let sel = &ev[..r];
            if sel.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::NumericalDomain(format!("matrix has numerical rank below the hint {r}")));
            }
            sel
        }
        None => {
            let k = ev.iter().take_while(|&&x| x > rtol * lmax && x > 0.0).count();
            &ev[..k]
        }
    };
    Ok(selected.iter().map(|x| libm::log(*x)).sum())
}

/// Pseudo-determinant (product of the positive eigenvalues).
pub fn pdet(h: &ComplexMatrix, rank_hint: Option<usize>, rtol: f64) -> Result<f64> {
    log_pdet(h, rank_hint, rtol).map(libm::exp)
}

/// Cholesky factor of a real symmetric banded Toeplitz matrix.
///
/// `T[i, j] = acf(|i - j|)` with `acf(k) = 0` for `k > bandwidth`. The
/// factor has the same bandwidth, so both factoring and applying it are
/// linear in the size.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bandwidth: usize,
    // Row i holds L[i, i - w_i ..= i] with w_i = min(i, bandwidth).
    rows: Vec<Vec<f64>>,
}

impl BandCholesky {
    pub fn toeplitz(n: usize, acf: &[f64], ridge: f64) -> Result<Self> {
        if n == 0 || acf.is_empty() {
            return Err(param_err!("banded Cholesky needs n >= 1 and a nonempty autocovariance"));
        }
        let bandwidth = (acf.len() - 1).min(n - 1);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let w = i.min(bandwidth);
            let mut row = vec![0.0; w + 1];
            for jj in 0..=w {
                let j = i - w + jj;
                let mut s = acf[i - j];
                if i == j {
                    s += ridge;
                }
                // Overlap of rows i and j in the band.
                let wj = j.min(bandwidth);
                let start = (i - w).max(j - wj);
                if i == j {
                    s -= row[..jj].iter().map(|x| x * x).sum::<f64>();
                } else {
                    for k in start..j {
                        s -= row[k - (i - w)] * rows[j][k - (j - wj)];
                    }
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NumericalDomain(format!(
                            "Toeplitz covariance is not positive definite (pivot {i} = {s:e})"
                        )));
                    }
                    row[jj] = libm::sqrt(s);
                } else {
                    row[jj] = s / rows[j][wj];
                }
            }
            rows.push(row);
        }
        Ok(Self { n, bandwidth, rows })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// `L z` for a complex vector `z` of length `n`.
    pub fn apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(z.len(), self.n);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let start = i + 1 - row.len();
                row.iter().zip(&z[start..=i]).map(|(l, x)| x * *l).sum()
            })
            .collect()
    }

    /// Entry `L[i, j]` (zero outside the band).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.bandwidth {
            return 0.0;
        }
        let row = &self.rows[i];
        row[row.len() - 1 - (i - j)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexMatrix::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn rel_err(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn lq_of_diagonal_is_itself() {
        let x = ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let f = lq_decompose(&x).unwrap();
        assert!(rel_err(&f.lower, &x) < 1e-15);
    }

    #[test]
    fn lq_of_single_row_is_its_norm() {
        let x = ComplexMatrix::from_real_rows(&[&[0.0, 3.0]]);
        let f = lq_decompose(&x).unwrap();
        assert_eq!(f.lower.shape(), (1, 1));
        // Gram-Schmidt of one row: L = ||x||, q = x / ||x||.
        assert!(cabs(f.lower[(0, 0)] - c(3.0, 0.0)) < 1e-15);
        assert!(cabs(f.ortho_rows[(0, 1)] - c(1.0, 0.0)) < 1e-15);
    }

    #[test]
    fn lq_reconstructs_random_wide_matrix() {
        let x = random(4, 8, 1);
        let f = lq_decompose(&x).unwrap();
        let recon = f.lower.matmul(&f.ortho_rows).unwrap();
        assert!(rel_err(&recon, &x) <= 1e-10);
        let qqh = f.ortho_rows.gram();
        assert!(rel_err(&qqh, &ComplexMatrix::identity(4)) <= 1e-12);
        for i in 0..4 {
            assert_eq!(f.lower[(i, i)].im, 0.0);
            assert!(f.lower[(i, i)].re >= 0.0);
            for j in i + 1..4 {
                assert_eq!(f.lower[(i, j)], ZERO);
            }
        }
        assert_eq!(lq_lower(&x).unwrap(), f.lower);
        let diag = lq_diagonal(&x).unwrap();
        for (i, d) in diag.iter().enumerate() {
            assert_eq!(*d, f.lower[(i, i)].re);
        }
    }

    #[test]
    fn lq_rejects_tall_input() {
        assert!(matches!(lq_decompose(&random(3, 2, 0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn pdet_examples() {
        assert!((pdet(&ComplexMatrix::identity(3), None, DEFAULT_RTOL).unwrap() - 1.0).abs() < 1e-14);
        let h = ComplexMatrix::diag_real(&[2.0, 3.0, 0.0]);
        assert!((pdet(&h, None, DEFAULT_RTOL).unwrap() - 6.0).abs() < 1e-12);
        assert!((pdet(&h, Some(2), DEFAULT_RTOL).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(pdet(&h, Some(0), DEFAULT_RTOL).unwrap(), 1.0);
        assert!(pdet(&h, Some(3), DEFAULT_RTOL).is_err());
    }

    #[test]
    fn pdet_of_gram_matches_small_side_determinant() {
        let g = random(5, 3, 7);
        let big = g.gram();
        let small = g.adjoint_matmul(&g).unwrap();
        // |G^H G| from its Cholesky diagonal, independent of the eigen solver.
        let l = cholesky_lower(&small).unwrap();
        let det: f64 = (0..3).map(|i| l[(i, i)].re * l[(i, i)].re).product();
        let p = pdet(&big, Some(3), DEFAULT_RTOL).unwrap();
        assert!(((p - det) / det).abs() < 1e-10, "{p} vs {det}");
    }

    #[test]
    fn pdet_rejects_non_hermitian_and_indefinite() {
        let h = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(pdet(&h, None, DEFAULT_RTOL), Err(Error::Parameter(_))));
        let h = ComplexMatrix::diag_real(&[1.0, -0.5]);
        assert!(matches!(pdet(&h, None, DEFAULT_RTOL), Err(Error::NumericalDomain(_))));
    }

    #[test]
    fn eigenvalues_of_complex_hermitian_2x2() {
        // [[2, i],[-i, 2]] has eigenvalues 3 and 1.
        let h = ComplexMatrix::from_row_major(2, 2, vec![c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]).unwrap();
        let ev = hermitian_eigenvalues(&h).unwrap();
        assert!((ev[0] - 3.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn axis_aligned_split() {
        let cm = ComplexMatrix::from_real_rows(&[&[0.0], &[1.0]]);
        let b = orthobasis_split(&cm).unwrap();
        assert!((cabs(b.u[(1, 0)]) - 1.0).abs() < 1e-15);
        assert!(cabs(b.u_perp[(1, 0)]) < 1e-15);
        let proj = cm.matmul(&pinv(&cm).unwrap()).unwrap();
        let t = b.ubar.adjoint().matmul(&proj).unwrap().matmul(&b.ubar).unwrap();
        assert!(rel_err(&t, &ComplexMatrix::diag_real(&[0.0, 1.0])) < 1e-14);
    }

    #[test]
    fn split_of_random_code_matrix() {
        let cm = random(8, 3, 11);
        let b = orthobasis_split(&cm).unwrap();
        let ubar_gram = b.ubar.gram();
        assert!(ubar_gram.sub(&ComplexMatrix::identity(8)).unwrap().frobenius_norm() <= 1e-10);
        let proj = cm.matmul(&pinv(&cm).unwrap()).unwrap();
        assert!(proj.sub(&b.u.gram()).unwrap().frobenius_norm() <= 1e-10);
        assert!(b.u_perp.adjoint_matmul(&cm).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn split_of_orthonormal_columns_spans_same_range() {
        let q = lq_decompose(&random(2, 5, 3)).unwrap().ortho_rows.adjoint();
        let b = orthobasis_split(&q).unwrap();
        // U = C W for a 2x2 unitary W.
        let w = q.adjoint_matmul(&b.u).unwrap();
        assert!(rel_err(&w.adjoint_matmul(&w).unwrap(), &ComplexMatrix::identity(2)) < 1e-12);
        assert!(rel_err(&q.matmul(&w).unwrap(), &b.u) < 1e-12);
    }

    #[test]
    fn split_rejects_rank_deficiency() {
        let mut cm = random(6, 3, 5);
        let col0 = cm.column(0);
        cm.set_column(2, &col0);
        assert!(matches!(orthobasis_split(&cm), Err(Error::DegenerateCode(_))));
        assert!(matches!(pinv(&cm), Err(Error::DegenerateCode(_))));
    }

    #[test]
    fn cholesky_examples() {
        let p = cholesky_lower(&ComplexMatrix::identity(2).scale(c(4.0, 0.0))).unwrap();
        assert!(rel_err(&p, &ComplexMatrix::identity(2).scale(c(2.0, 0.0))) < 1e-15);
        let h = ComplexMatrix::from_real_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let p = cholesky_lower(&h).unwrap();
        // Hand Cholesky: sqrt(2), 1/sqrt(2), sqrt(3/2).
        let want = ComplexMatrix::from_real_rows(&[&[2f64.sqrt(), 0.0], &[0.5f64.sqrt(), 1.5f64.sqrt()]]);
        assert!(rel_err(&p, &want) < 1e-15);
        let a = random(5, 5, 9);
        let h = a.gram().add(&ComplexMatrix::identity(5)).unwrap();
        let p = cholesky_lower(&h).unwrap();
        assert!(rel_err(&p.gram(), &h) <= 1e-10);
        assert!(matches!(cholesky_lower(&ComplexMatrix::diag_real(&[1.0, 0.0])), Err(Error::NumericalDomain(_))));
    }

    #[test]
    fn pinv_examples() {
        let cm = ComplexMatrix::from_real_rows(&[&[2.0], &[0.0], &[0.0]]);
        let p = pinv(&cm).unwrap();
        assert!(rel_err(&p, &ComplexMatrix::from_real_rows(&[&[0.5, 0.0, 0.0]])) < 1e-15);

        let q = lq_decompose(&random(3, 6, 4)).unwrap().ortho_rows.adjoint();
        assert!(rel_err(&pinv(&q).unwrap(), &q.adjoint()) < 1e-12);

        // Moore-Penrose identities.
        let a = random(6, 4, 21);
        let ap = pinv(&a).unwrap();
        let a_ap = a.matmul(&ap).unwrap();
        let ap_a = ap.matmul(&a).unwrap();
        assert!(rel_err(&a_ap.matmul(&a).unwrap(), &a) < 1e-10);
        assert!(rel_err(&ap_a.matmul(&ap).unwrap(), &ap) < 1e-10);
        assert!(a_ap.hermitian_defect() < 1e-10);
        assert!(ap_a.hermitian_defect() < 1e-10);
        assert!(rel_err(&ap_a, &ComplexMatrix::identity(4)) < 1e-10);
    }

    #[test]
    fn triangular_solves_invert_products() {
        let a = random(4, 4, 31);
        let h = a.gram().add(&ComplexMatrix::identity(4)).unwrap();
        let l = cholesky_lower(&h).unwrap();
        let b = random(4, 3, 32);
        let x = solve_lower(&l, &b).unwrap();
        assert!(rel_err(&l.matmul(&x).unwrap(), &b) < 1e-12);
        let y = solve_lower_adjoint(&l, &b).unwrap();
        assert!(rel_err(&l.adjoint().matmul(&y).unwrap(), &b) < 1e-12);
    }

    #[test]
    fn band_cholesky_matches_dense() {
        let acf = [2.0, 0.7, -0.3, 0.1];
        for n in [1, 3, 9] {
            let band = BandCholesky::toeplitz(n, &acf, 0.0).unwrap();
            let dense = ComplexMatrix::from_fn(n, n, |i, j| {
                let k = i.abs_diff(j);
                c(if k < acf.len() { acf[k] } else { 0.0 }, 0.0)
            });
            let l = cholesky_lower(&dense).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!((band.get(i, j) - l[(i, j)].re).abs() < 1e-13, "({i},{j})");
                }
            }
            let z: Vec<Complex64> = (0..n).map(|i| c(i as f64, 1.0)).collect();
            let want = l.matvec(&z).unwrap();
            for (a, b) in band.apply(&z).iter().zip(&want) {
                assert!(cabs(a - b) < 1e-12);
            }
        }
        assert!(matches!(BandCholesky::toeplitz(3, &[1.0, 1.0, 1.0], 0.0), Err(Error::NumericalDomain(_))));
        assert!(BandCholesky::toeplitz(3, &[1.0, 1.0, 1.0], 1e-8).is_ok());
    }

    #[test]
    fn singular_values_of_wide_and_tall_agree() {
        let x = random(3, 7, 41);
        let a = singular_values(&x).unwrap();
        let b = singular_values(&x.adjoint()).unwrap();
        for (s, t) in a.iter().zip(&b) {
            assert!((s - t).abs() < 1e-12);
        }
        let svd = thin_svd(&x.adjoint()).unwrap();
        let recon = svd.u.matmul(&ComplexMatrix::diag_real(&svd.sigma)).unwrap().matmul(&svd.v.adjoint()).unwrap();
        assert!(rel_err(&recon, &x.adjoint()) < 1e-12);
    }
}
