//! Chip pulse, its matched-filter autocorrelation and the filtered-noise
//! covariance.
//!
//! The transmit pulse is a time-domain raised cosine centered in
//! `[0, P)` and truncated to that interval, then renormalized to unit
//! energy on the integration grid. Its autocorrelation is tabulated on the
//! same grid and read back with linear interpolation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{param_err, Result};
use crate::linalg::{cholesky_lower, BandCholesky, ComplexMatrix};
use crate::rng::complex_gaussian;
use crate::SystemParams;

/// Integration points per chip per receiver sample.
pub const DEFAULT_FINE_FACTOR: usize = 64;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        libm::sin(PI * x) / (PI * x)
    }
}

/// Untruncated raised-cosine shape at `x` chips from its center.
fn raised_cosine(x: f64, alpha: f64) -> f64 {
    let u = 2.0 * alpha * x;
    let denom = 1.0 - u * u;
    if libm::fabs(denom) < 1e-12 {
        // Removable singularity at |x| = 1/(2 alpha).
        return PI / 4.0 * sinc(1.0 / (2.0 * alpha));
    }
    sinc(x) * libm::cos(PI * alpha * x) / denom
}

/// Unit-energy raised-cosine chip pulse supported on `[0, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipPulse {
    alpha: f64,
    p: usize,
    fine_per_chip: usize,
    energy_norm: f64,
}

impl ChipPulse {
    pub fn new(alpha: f64, p: usize, fine_per_chip: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(param_err!("roll-off {alpha} outside [0, 1]"));
        }
        if p == 0 || fine_per_chip == 0 {
            return Err(param_err!("pulse duration and integration grid must be positive"));
        }
        let mut pulse = Self { alpha, p, fine_per_chip, energy_norm: 1.0 };
        let h = 1.0 / fine_per_chip as f64;
        let energy: f64 = pulse.fine_samples().iter().map(|v| v * v).sum::<f64>() * h;
        if !(energy > 0.0) {
            return Err(param_err!("pulse has zero energy on the integration grid"));
        }
        pulse.energy_norm = 1.0 / libm::sqrt(energy);
        Ok(pulse)
    }

    /// Pulse for the given system, integrated on `64 * M` points per chip.
    pub fn for_params(params: &SystemParams) -> Result<Self> {
        Self::new(params.alpha, params.p, DEFAULT_FINE_FACTOR * params.m)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn duration(&self) -> usize {
        self.p
    }

    pub fn fine_per_chip(&self) -> usize {
        self.fine_per_chip
    }

    pub fn energy_norm(&self) -> f64 {
        self.energy_norm
    }

    /// Pulse amplitude at time `t` (in chips).
    pub fn value(&self, t: f64) -> f64 {
        if !(t >= 0.0 && t < self.p as f64) {
            return 0.0;
        }
        self.energy_norm * raised_cosine(t - self.p as f64 / 2.0, self.alpha)
    }

    /// Samples on the integration grid `i / fine_per_chip`, `i < P * fine_per_chip`.
    pub fn fine_samples(&self) -> Vec<f64> {
        let h = 1.0 / self.fine_per_chip as f64;
        (0..self.p * self.fine_per_chip).map(|i| self.value(i as f64 * h)).collect()
    }

    pub fn autocorr(&self) -> PulseAutocorr {
        PulseAutocorr::new(self)
    }
}

/// `psi(t) = int psi_tx(u) psi_tx(u - t + P) du`, tabulated on `[0, 2P]`.
///
/// The table is filled from one-sided lags and mirrored, so it is exactly
/// symmetric about `t = P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseAutocorr {
    p: usize,
    fine_per_chip: usize,
    table: Vec<f64>,
}

impl PulseAutocorr {
    pub fn new(pulse: &ChipPulse) -> Self {
        let s = pulse.fine_samples();
        let n = s.len();
        let h = 1.0 / pulse.fine_per_chip as f64;
        let mut table = vec![0.0; 2 * n + 1];
        for k in 0..n {
            let c: f64 = s[k..].iter().zip(&s[..n - k]).map(|(a, b)| a * b).sum::<f64>() * h;
            table[n + k] = c;
            table[n - k] = c;
        }
        Self { p: pulse.p, fine_per_chip: pulse.fine_per_chip, table }
    }

    /// `psi(t)` with linear interpolation; zero outside `(0, 2P)`.
    pub fn value(&self, t: f64) -> f64 {
        let span = 2.0 * self.p as f64;
        if !(t > 0.0 && t < span) {
            return 0.0;
        }
        let pos = t * self.fine_per_chip as f64;
        let i = libm::floor(pos) as usize;
        let frac = pos - i as f64;
        if i + 1 >= self.table.len() {
            return self.table[self.table.len() - 1];
        }
        let a = self.table[i];
        if frac == 0.0 {
            a
        } else {
            a + frac * (self.table[i + 1] - a)
        }
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn duration(&self) -> usize {
        self.p
    }

    /// Noise autocovariance at sample lags `0, 1, ...` for `M` samples per
    /// chip: `N0 * psi(m / M + P)`, truncated after the last nonzero lag.
    pub fn sample_acf(&self, m: usize, n0: f64) -> Vec<f64> {
        (0..self.p * m).map(|lag| n0 * self.value(lag as f64 / m as f64 + self.p as f64)).collect()
    }
}

/// `R_n[i, j] = N0 * psi((i - j) / M + P)` over one `L*N*M` window.
pub fn noise_covariance(params: &SystemParams, psi: &PulseAutocorr) -> Result<ComplexMatrix> {
    let n = params.lnm();
    let m = params.m as f64;
    let p = params.p as f64;
    let rn = ComplexMatrix::from_fn(n, n, |i, j| {
        let lag = i as f64 - j as f64;
        Complex64::new(params.n0 * psi.value(lag / m + p), 0.0)
    });
    cholesky_lower(&rn)?;
    Ok(rn)
}

/// How the filtered noise of successive windows relates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NoiseMode {
    /// One stationary sample stream; windows overlap by `L - 1` symbols.
    #[default]
    FaithfulStream,
    /// An independent `CN(0, R_n)` draw per window.
    IidBlocks,
}

/// Generator for a stationary Gaussian stream with the filtered-noise
/// autocovariance; the banded Cholesky factor is computed once.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    factor: BandCholesky,
}

impl NoiseStream {
    pub fn new(length: usize, m: usize, n0: f64, psi: &PulseAutocorr) -> Result<Self> {
        if length == 0 {
            return Err(param_err!("noise stream length must be at least 1"));
        }
        let acf = psi.sample_acf(m, n0);
        Ok(Self { factor: BandCholesky::toeplitz(length, &acf, 0.0)? })
    }

    pub fn len(&self) -> usize {
        self.factor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        let z: Vec<Complex64> = (0..self.factor.len()).map(|_| complex_gaussian(rng)).collect();
        self.factor.apply(&z)
    }
}

/// One-shot stream draw (factorizes on every call).
pub fn sample_noise_stream<R: Rng + ?Sized>(
    length: usize,
    params: &SystemParams,
    psi: &PulseAutocorr,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    Ok(NoiseStream::new(length, params.m, params.n0, psi)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;

    fn pulse(alpha: f64, p: usize, m: usize) -> ChipPulse {
        ChipPulse::new(alpha, p, DEFAULT_FINE_FACTOR * m).unwrap()
    }

    #[test]
    fn pulse_is_zero_at_start_and_peaks_at_center() {
        for alpha in [0.0, 0.3, 0.5, 1.0] {
            let pl = pulse(alpha, 4, 1);
            assert!(pl.value(0.0).abs() < 1e-15);
            let peak = pl.value(2.0);
            for i in 0..400 {
                assert!(pl.value(i as f64 / 100.0) <= peak + 1e-15);
            }
            assert_eq!(pl.value(-0.1), 0.0);
            assert_eq!(pl.value(4.0), 0.0);
        }
    }

    #[test]
    fn removable_singularity_is_continuous() {
        let alpha = 0.5; // singular at |x| = 1
        let at = raised_cosine(1.0, alpha);
        let near = raised_cosine(1.0 + 1e-7, alpha);
        assert!((at - near).abs() < 1e-6);
    }

    #[test]
    fn energy_is_unit_under_trapezoid_rule() {
        let pl = pulse(0.3, 4, 1);
        let grid = 64 * 4;
        let h = 1.0 / 64.0;
        let vals: Vec<f64> = (0..=grid).map(|i| pl.value(i as f64 * h).powi(2)).collect();
        let trap = h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[grid]));
        assert!((trap - 1.0).abs() < 1e-6, "{trap}");
    }

    #[test]
    fn autocorr_is_unit_at_center_and_vanishes_outside() {
        let psi = pulse(0.3, 4, 1).autocorr();
        assert!((psi.value(4.0) - 1.0).abs() < 1e-6);
        assert_eq!(psi.value(10.0), 0.0);
        assert_eq!(psi.value(0.0), 0.0);
        assert_eq!(psi.value(8.0), 0.0);
    }

    #[test]
    fn autocorr_matches_finer_riemann_sum() {
        let pl = pulse(0.3, 4, 1);
        let psi = pl.autocorr();
        let t = 4.5;
        let fine = 4 * pl.fine_per_chip();
        let h = 1.0 / fine as f64;
        let brute: f64 = (0..4 * fine)
            .map(|i| {
                let u = i as f64 * h;
                pl.value(u) * pl.value(u - t + 4.0)
            })
            .sum::<f64>()
            * h;
        assert!((psi.value(t) - brute).abs() < 1e-5, "{} vs {brute}", psi.value(t));
    }

    #[test]
    fn autocorr_is_symmetric_and_grid_converged() {
        let coarse = pulse(0.3, 4, 2);
        let psi = coarse.autocorr();
        let psi_fine = ChipPulse::new(0.3, 4, 2 * coarse.fine_per_chip()).unwrap().autocorr();
        let s = coarse.fine_per_chip();
        for k in 0..=4 * s {
            let tau = k as f64 / s as f64;
            assert!((psi.value(4.0 + tau) - psi.value(4.0 - tau)).abs() <= 1e-9);
            assert!((psi.value(4.0 + tau) - psi_fine.value(4.0 + tau)).abs() < 1e-5, "tau = {tau}");
        }
    }

    fn toy_params() -> SystemParams {
        SystemParams { alpha: 0.3, ..SystemParams::toy() }
    }

    #[test]
    fn noise_covariance_structure() {
        let params = SystemParams { n0: 2.5, ..SystemParams::default() };
        let psi = ChipPulse::for_params(&params).unwrap().autocorr();
        let rn = noise_covariance(&params, &psi).unwrap();
        let band = 2 * params.p * params.m;
        for i in 0..rn.rows() {
            assert!((rn[(i, i)].re - 2.5).abs() < 1e-5);
            for j in 0..rn.cols() {
                assert_eq!(rn[(i, j)], rn[(j, i)]);
                if i.abs_diff(j) >= band {
                    assert_eq!(rn[(i, j)].re, 0.0);
                }
                if i > 0 && j > 0 {
                    assert_eq!(rn[(i, j)], rn[(i - 1, j - 1)]);
                }
            }
        }
    }

    #[test]
    fn toy_noise_covariance_is_entrywise_autocorr_and_pd() {
        let params = toy_params();
        let psi = ChipPulse::for_params(&params).unwrap().autocorr();
        let rn = noise_covariance(&params, &psi).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = params.n0 * psi.value((i as f64 - j as f64) / params.m as f64 + params.p as f64);
                assert_eq!(rn[(i, j)].re, want);
            }
        }
        let ev = crate::linalg::hermitian_eigenvalues(&rn).unwrap();
        assert!(*ev.last().unwrap() > 0.0);
    }

    #[test]
    fn stream_single_sample_has_variance_n0() {
        let params = SystemParams { n0: 3.0, ..SystemParams::default() };
        let psi = ChipPulse::for_params(&params).unwrap().autocorr();
        let stream = NoiseStream::new(1, params.m, params.n0, &psi).unwrap();
        let mut rng = trial_rng(1, 0, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| stream.sample(&mut rng)[0].norm_sqr()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn stream_autocovariance_matches_psi() {
        let params = SystemParams::default();
        let psi = ChipPulse::for_params(&params).unwrap().autocorr();
        let mut rng = trial_rng(2, 0, 0);
        let x = sample_noise_stream(100_000, &params, &psi, &mut rng).unwrap();
        // Block means give a standard error that accounts for the serial
        // correlation of the lagged products.
        let check = |lag: usize, want: f64| {
            let prods: Vec<f64> = (0..x.len() - lag).map(|i| (x[i + lag] * x[i].conj()).re).collect();
            let blocks: Vec<f64> =
                prods.chunks(1000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let nb = blocks.len() as f64;
            let mean = blocks.iter().sum::<f64>() / nb;
            let var = blocks.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            let se = (var / nb).sqrt();
            assert!((mean - want).abs() < 3.0 * se, "lag {lag}: {mean} vs {want} (se {se})");
        };
        check(1, params.n0 * psi.value(1.0 / params.m as f64 + params.p as f64));
        check(2 * params.p * params.m, 0.0);
    }
}
