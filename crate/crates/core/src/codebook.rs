//! Spreading codes and the code matrices that map a user's channel vector
//! into an observation window.
//!
//! `A_k` is the chip-spaced banded Toeplitz matrix of the code expanded by
//! `I_M`; `C_{k,l}` is its `l`-symbol shift clipped to the `L*N*M` window.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{param_err, Error, Result};
use crate::linalg::{orthobasis_split, pinv, ComplexMatrix};
use crate::rng::fnv1a;
use crate::Dims;

/// Primitive feedback polynomials, indexed by degree. Bit `i` is the
/// coefficient of `x^i`; the leading `x^degree` term is implicit.
pub const PRIMITIVE_TAPS: [(u32, u32); 9] = [
    (2, 0b11),         // x^2 + x + 1
    (3, 0b011),        // x^3 + x + 1
    (4, 0b0011),       // x^4 + x + 1
    (5, 0b0_0101),     // x^5 + x^2 + 1
    (6, 0b00_0011),    // x^6 + x + 1
    (7, 0b000_0011),   // x^7 + x + 1
    (8, 0b0001_1101),  // x^8 + x^4 + x^3 + x^2 + 1
    (9, 0b0_0001_0001), // x^9 + x^4 + 1
    (10, 0b00_0000_1001), // x^10 + x^3 + 1
];

pub fn default_taps(degree: u32) -> Option<u32> {
    PRIMITIVE_TAPS.iter().find(|(d, _)| *d == degree).map(|(_, t)| *t)
}

/// A length-`N` code with entries `+-1/sqrt(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadingCode {
    chips: Vec<f64>,
}

impl SpreadingCode {
    /// From `+-1` signs (the exchange format of configuration files).
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if signs.is_empty() {
            return Err(param_err!("spreading code must have at least one chip"));
        }
        if let Some(bad) = signs.iter().find(|s| **s != 1 && **s != -1) {
            return Err(param_err!("spreading code entries must be +1 or -1, found {bad}"));
        }
        let amp = 1.0 / libm::sqrt(signs.len() as f64);
        Ok(Self { chips: signs.iter().map(|s| f64::from(*s) * amp).collect() })
    }

    /// Uniformly random signs.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let signs: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self::from_signs(&signs)
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn chips(&self) -> &[f64] {
        &self.chips
    }

    pub fn signs(&self) -> Vec<i8> {
        self.chips.iter().map(|c| if *c > 0.0 { 1 } else { -1 }).collect()
    }

    /// Cyclic correlation `sum_n beta(n) beta((n + lag) mod N)`.
    pub fn cyclic_autocorr(&self, lag: usize) -> f64 {
        let n = self.len();
        (0..n).map(|i| self.chips[i] * self.chips[(i + lag) % n]).sum()
    }
}

/// Maximal-length sequence from a Fibonacci LFSR.
///
/// The recurrence is `a[n + degree] = xor_i taps_i * a[n + i]`; the seed
/// supplies `a[0..degree]` (bit `i` of `seed` is `a[i]`). Bits map
/// `0 -> +1/sqrt(N)`, `1 -> -1/sqrt(N)` with `N = 2^degree - 1`.
pub fn gen_mseq(degree: u32, taps: u32, seed: u32) -> Result<SpreadingCode> {
    if !(2..=24).contains(&degree) {
        return Err(param_err!("LFSR degree {degree} outside 2..=24"));
    }
    let mask = (1u32 << degree) - 1;
    if seed & mask == 0 {
        return Err(param_err!("LFSR seed must be nonzero"));
    }
    if taps & 1 == 0 || taps & !mask != 0 {
        return Err(param_err!("taps {taps:#b} do not describe a degree-{degree} polynomial with constant term"));
    }
    let len = (1usize << degree) - 1;
    let mut state = seed & mask;
    let mut signs = Vec::with_capacity(len);
    for _ in 0..len {
        signs.push(if state & 1 == 0 { 1 } else { -1 });
        let feedback = (state & taps).count_ones() & 1;
        state = (state >> 1) | (feedback << (degree - 1));
    }
    SpreadingCode::from_signs(&signs)
}

/// How codes are assigned to users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CodeFamily {
    /// Distinct cyclic shifts of one m-sequence (user `k` uses seed `k+1`).
    /// Needs `N = 2^d - 1`; other lengths fall back to random codes.
    #[default]
    MSequence,
    /// Independent uniformly random signs.
    Random,
}

/// Codes for `k_users` users of length `n`.
pub fn assign_codes<R: Rng + ?Sized>(
    family: CodeFamily,
    n: usize,
    k_users: usize,
    rng: &mut R,
) -> Result<Vec<SpreadingCode>> {
    let degree = (n + 1).trailing_zeros();
    let is_mseq_len = (n + 1).is_power_of_two() && default_taps(degree).is_some();
    match family {
        CodeFamily::MSequence if is_mseq_len => {
            if k_users > n {
                return Err(param_err!("an m-sequence of length {n} has only {n} distinct shifts"));
            }
            let taps = default_taps(degree).expect("checked above");
            (0..k_users).map(|k| gen_mseq(degree, taps, k as u32 + 1)).collect()
        }
        _ => (0..k_users).map(|_| SpreadingCode::random(n, rng)).collect(),
    }
}

/// Hash of the code signs, recorded with results.
pub fn code_fingerprint(codes: &[SpreadingCode]) -> String {
    let bytes: Vec<u8> = codes.iter().flat_map(|c| c.signs()).map(|s| s as u8).collect();
    format!("{:016x}", fnv1a(&bytes))
}

/// `A_k`: `((L*N + 2P - 1) M) x ((N + 2P) M)` with
/// `A[m, j] = beta(n)` iff `m - j = n M`, `0 <= n < N`.
pub fn build_a(code: &SpreadingCode, dims: &Dims) -> Result<ComplexMatrix> {
    check_code_len(code, dims)?;
    let m = dims.m;
    let mut a = ComplexMatrix::zeros(dims.banded_rows(), dims.d());
    for j in 0..dims.d() {
        for (n, b) in code.chips().iter().enumerate() {
            let row = j + n * m;
            if row < a.rows() {
                a[(row, j)] = Complex64::new(*b, 0.0);
            }
        }
    }
    Ok(a)
}

/// `C_{k,l}`: `LNM x D` with `C[m, j] = beta(n)` iff `m - l N M - j = n M`.
pub fn build_c(code: &SpreadingCode, ell: isize, dims: &Dims) -> Result<ComplexMatrix> {
    check_code_len(code, dims)?;
    if !dims.offsets().contains(&ell) {
        return Err(param_err!("symbol offset {ell} outside [-2, {}]", dims.l as isize - 1));
    }
    let (lnm, d, m) = (dims.lnm() as isize, dims.d() as isize, dims.m as isize);
    let shift = ell * dims.nm() as isize;
    let mut c = ComplexMatrix::zeros(lnm as usize, d as usize);
    for j in 0..d {
        for (n, b) in code.chips().iter().enumerate() {
            let row = shift + j + n as isize * m;
            if (0..lnm).contains(&row) {
                c[(row as usize, j as usize)] = Complex64::new(*b, 0.0);
            }
        }
    }
    Ok(c)
}

fn check_code_len(code: &SpreadingCode, dims: &Dims) -> Result<()> {
    dims.check()?;
    if code.len() != dims.n {
        return Err(param_err!("code length {} does not match N = {}", code.len(), dims.n));
    }
    Ok(())
}

/// Sparse copy of one `C_{k,l}`: `(row, column, value)` of each nonzero.
#[derive(Debug, Clone, PartialEq)]
struct SparseShift {
    entries: Vec<(u32, u32, f64)>,
}

/// All window shifts `C_{k,-2} .. C_{k,L-1}` of one user's code.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedCodes {
    dims: Dims,
    dense: Vec<ComplexMatrix>,
    sparse: Vec<SparseShift>,
}

impl ShiftedCodes {
    pub fn new(code: &SpreadingCode, dims: &Dims) -> Result<Self> {
        let mut dense = Vec::new();
        let mut sparse = Vec::new();
        for ell in dims.offsets() {
            let c = build_c(code, ell, dims)?;
            let mut entries = Vec::new();
            for i in 0..c.rows() {
                for j in 0..c.cols() {
                    let v = c[(i, j)];
                    if v.re != 0.0 {
                        entries.push((i as u32, j as u32, v.re));
                    }
                }
            }
            dense.push(c);
            sparse.push(SparseShift { entries });
        }
        Ok(Self { dims: *dims, dense, sparse })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    /// `C_{k,ell}`.
    pub fn shift(&self, ell: isize) -> &ComplexMatrix {
        &self.dense[(ell + 2) as usize]
    }

    /// `(ell, C_{k,ell})` for every offset.
    pub fn iter(&self) -> impl Iterator<Item = (isize, &ComplexMatrix)> {
        self.dims.offsets().zip(self.dense.iter())
    }

    /// `out += weight * C_{k,ell} * g`.
    pub fn accumulate(&self, ell: isize, weight: Complex64, g: &[Complex64], out: &mut [Complex64]) {
        for &(i, j, v) in &self.sparse[(ell + 2) as usize].entries {
            out[i as usize] += weight * g[j as usize] * v;
        }
    }
}

/// Detector-side geometry of the user under test.
#[derive(Debug, Clone)]
pub struct CodeGeometry {
    /// `C = C_{0,0}`.
    pub c: ComplexMatrix,
    /// `C^+`.
    pub c_pinv: ComplexMatrix,
    /// `C C^+`.
    pub proj: ComplexMatrix,
    /// Orthonormal basis of `range(C)`.
    pub u: ComplexMatrix,
    /// `[U_perp, U]`.
    pub ubar: ComplexMatrix,
    /// Column dimension `(N + 2P) M`.
    pub d: usize,
}

impl CodeGeometry {
    /// Geometry of an arbitrary full-column-rank `C` with fewer columns
    /// than rows.
    pub fn from_matrix(c: ComplexMatrix) -> Result<Self> {
        let (lnm, d) = c.shape();
        if d == 0 || d >= lnm {
            return Err(param_err!("D = {d} must lie in [1, {lnm}) for a {lnm}-row code matrix"));
        }
        let basis = orthobasis_split(&c)?;
        if basis.u.cols() != d {
            return Err(Error::DegenerateCode(format!("code matrix rank {} below D = {d}", basis.u.cols())));
        }
        let c_pinv = pinv(&c)?;
        let proj = c.matmul(&c_pinv)?;
        Ok(Self { c, c_pinv, proj, u: basis.u, ubar: basis.ubar, d })
    }

    pub fn lnm(&self) -> usize {
        self.c.rows()
    }
}

/// Geometry of `C_{0,0}` for the user under test.
pub fn detector_geometry(code: &SpreadingCode, dims: &Dims) -> Result<CodeGeometry> {
    let (lnm, d) = (dims.lnm(), dims.d());
    if d >= lnm {
        return Err(param_err!("D = {d} must be below L*N*M = {lnm} (need (L-1)N > 2P)"));
    }
    CodeGeometry::from_matrix(build_c(code, 0, dims)?)
}
