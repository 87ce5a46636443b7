//! Test statistics for the presence of user 0.
//!
//! The MGLRT family is returned as natural logarithms: `ln T`,
//! `ln T_CFAR = ln T - ln T_e` and `ln T_n = ln T - ln T_e,max`. The genie
//! statistic is already a log-likelihood ratio. Every detector decides H1
//! iff its statistic strictly exceeds the threshold.

use alloc::format;
use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;

use crate::channel::GenieCovariances;
use crate::codebook::CodeGeometry;
use crate::error::{param_err, Error, Result};
use crate::linalg::{cholesky_lower, log_pdet, lq_diagonal, solve_lower, ComplexMatrix, DEFAULT_RTOL};

/// Diagonal entries of the LQ factor below this fraction of the largest
/// are treated as a rank collapse.
const RANK_COLLAPSE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DetectorId {
    #[cfg_attr(feature = "serde", serde(rename = "mglrt"))]
    Mglrt,
    #[cfg_attr(feature = "serde", serde(rename = "mglrt-direct"))]
    MglrtDirect,
    #[cfg_attr(feature = "serde", serde(rename = "cfar"))]
    Cfar,
    #[cfg_attr(feature = "serde", serde(rename = "normalized"))]
    Normalized,
    #[cfg_attr(feature = "serde", serde(rename = "genie"))]
    Genie,
}

impl DetectorId {
    pub const ALL: [DetectorId; 5] =
        [DetectorId::Mglrt, DetectorId::MglrtDirect, DetectorId::Cfar, DetectorId::Normalized, DetectorId::Genie];

    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorId::Mglrt => "mglrt",
            DetectorId::MglrtDirect => "mglrt-direct",
            DetectorId::Cfar => "cfar",
            DetectorId::Normalized => "normalized",
            DetectorId::Genie => "genie",
        }
    }

    /// Whether the detector reads the true interference covariance.
    pub fn needs_covariance(&self) -> bool {
        matches!(self, DetectorId::Cfar | DetectorId::Genie)
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorId::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| param_err!("unknown detector '{s}' (expected mglrt, mglrt-direct, cfar, normalized or genie)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub detector: DetectorId,
    pub statistic: f64,
    /// `C^+ R`, when requested.
    pub estimate: Option<ComplexMatrix>,
}

fn check_data(r: &ComplexMatrix, geometry: &CodeGeometry) -> Result<()> {
    let lnm = geometry.lnm();
    if r.rows() != lnm {
        return Err(param_err!("data has {} rows, geometry expects {lnm}", r.rows()));
    }
    if r.cols() < lnm {
        return Err(Error::DegenerateData(format!("Q = {} windows is below L*N*M = {lnm}", r.cols())));
    }
    if !r.is_finite() {
        return Err(Error::DegenerateData("data contains non-finite entries".to_string()));
    }
    Ok(())
}

fn as_degenerate(e: Error) -> Error {
    match e {
        Error::NumericalDomain(msg) => Error::DegenerateData(msg),
        other => other,
    }
}

/// `(ln |R R^H|_p, ln |Pi R R^H Pi|_p)` with `Pi = I - C C^+`.
fn direct_parts(r: &ComplexMatrix, geometry: &CodeGeometry) -> Result<(f64, f64)> {
    check_data(r, geometry)?;
    let lnm = geometry.lnm();
    let rr = r.gram();
    let num = log_pdet(&rr, Some(lnm), DEFAULT_RTOL).map_err(as_degenerate)?;
    let pi = ComplexMatrix::identity(lnm).sub(&geometry.proj)?;
    let residual = pi.matmul(r)?;
    let den = log_pdet(&residual.gram(), Some(lnm - geometry.d), DEFAULT_RTOL).map_err(as_degenerate)?;
    Ok((num, den))
}

/// `ln T` from the ratio of pseudo-determinants.
pub fn log_mglrt_direct(r: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    let (num, den) = direct_parts(r, geometry)?;
    Ok(num - den)
}

pub fn mglrt_direct(r: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    log_mglrt_direct(r, geometry).map(libm::exp)
}

/// `ln T = sum 2 ln l_ii` over the last `D` diagonal entries of the LQ
/// factor of `Ubar^H R`.
pub fn log_mglrt_fast(r: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    check_data(r, geometry)?;
    let rotated = geometry.ubar.adjoint_matmul(r)?;
    let diag = lq_diagonal(&rotated)?;
    log_trailing_diagonal(&diag, geometry.d)
}

pub fn mglrt_fast(r: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    log_mglrt_fast(r, geometry).map(libm::exp)
}

fn log_trailing_diagonal(diag: &[f64], d: usize) -> Result<f64> {
    let lnm = diag.len();
    let max = diag.iter().copied().fold(0.0, f64::max);
    if let Some(i) = diag.iter().position(|&x| !(x > RANK_COLLAPSE_RTOL * max)) {
        return Err(Error::DegenerateData(format!("rank collapse: LQ diagonal entry {i} of {lnm} is {:e}", diag[i])));
    }
    Ok(diag[lnm - d..].iter().map(|x| 2.0 * libm::log(*x)).sum())
}

/// `C^+ R`.
pub fn estimate_signal(r: &ComplexMatrix, geometry: &CodeGeometry) -> Result<ComplexMatrix> {
    geometry.c_pinv.matmul(r)
}

/// `ln T_e`: trailing `D` squared diagonal of the Cholesky factor of
/// `Ubar^H M_w Ubar`.
pub fn log_te(m_w: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    if m_w.shape() != (geometry.lnm(), geometry.lnm()) {
        return Err(param_err!("covariance is {:?}, expected {}x{}", m_w.shape(), geometry.lnm(), geometry.lnm()));
    }
    let rotated = geometry.ubar.adjoint_matmul(&geometry.ubar.adjoint_matmul(m_w)?.adjoint())?;
    let chol = cholesky_lower(&hermitize(rotated))?;
    let lnm = geometry.lnm();
    Ok((lnm - geometry.d..lnm).map(|i| 2.0 * libm::log(chol[(i, i)].re)).sum())
}

pub fn compute_te(m_w: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    log_te(m_w, geometry).map(libm::exp)
}

/// Averages `H` with `H^H` to remove round-off asymmetry.
fn hermitize(h: ComplexMatrix) -> ComplexMatrix {
    let n = h.rows();
    ComplexMatrix::from_fn(n, n, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5)
}

/// `ln T_CFAR = ln T - ln T_e`.
pub fn log_cfar_statistic(r: &ComplexMatrix, m_w: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    Ok(log_mglrt_fast(r, geometry)? - log_te(m_w, geometry)?)
}

pub fn cfar_statistic(r: &ComplexMatrix, m_w: &ComplexMatrix, geometry: &CodeGeometry) -> Result<f64> {
    log_cfar_statistic(r, m_w, geometry).map(libm::exp)
}

/// `T_n = T / T_e,max`.
pub fn normalized_statistic(t: f64, te_max: f64) -> Result<f64> {
    if !(te_max > 0.0 && te_max.is_finite()) {
        return Err(param_err!("T_e,max = {te_max} must be finite and positive"));
    }
    Ok(t / te_max)
}

/// `ln T_n` from `ln T` and `ln T_e,max`.
pub fn log_normalized_statistic(log_t: f64, log_te_max: f64) -> Result<f64> {
    if !log_te_max.is_finite() {
        return Err(param_err!("ln T_e,max = {log_te_max} must be finite"));
    }
    Ok(log_t - log_te_max)
}

/// Genie detector with the per-realization factors precomputed.
#[derive(Debug, Clone)]
pub struct GenieDetector {
    w_factor: ComplexMatrix,
    z_factor: ComplexMatrix,
    /// `L_z^{-1} C`.
    whitened_code: ComplexMatrix,
    /// Cholesky factor of `C^H M_z^{-1} C`.
    code_gram_factor: ComplexMatrix,
}

impl GenieDetector {
    pub fn new(cov: &GenieCovariances, geometry: &CodeGeometry) -> Result<Self> {
        let w_factor = cholesky_lower(&cov.m_w)?;
        let z_factor = cholesky_lower(&cov.m_z)?;
        let whitened_code = solve_lower(&z_factor, &geometry.c)?;
        let code_gram_factor = cholesky_lower(&hermitize(whitened_code.adjoint_matmul(&whitened_code)?))
            .map_err(|e| Error::DegenerateCode(format!("C^H M_z^-1 C is singular: {e}")))?;
        Ok(Self { w_factor, z_factor, whitened_code, code_gram_factor })
    }

    /// `sum_q r^H (M_w^-1 - M_z^-1) r + r^H M_z^-1 C (C^H M_z^-1 C)^-1 C^H M_z^-1 r`.
    pub fn statistic(&self, r: &ComplexMatrix) -> Result<f64> {
        let yw = solve_lower(&self.w_factor, r)?;
        let yz = solve_lower(&self.z_factor, r)?;
        let proj = solve_lower(&self.code_gram_factor, &self.whitened_code.adjoint_matmul(&yz)?)?;
        Ok(energy(&yw) - energy(&yz) + energy(&proj))
    }
}

fn energy(x: &ComplexMatrix) -> f64 {
    x.as_slice().iter().map(Complex64::norm_sqr).sum()
}

pub fn genie_glrt(r: &ComplexMatrix, geometry: &CodeGeometry, cov: &GenieCovariances) -> Result<f64> {
    GenieDetector::new(cov, geometry)?.statistic(r)
}
