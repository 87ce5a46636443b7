//! Synthesis of the `L*N*M x Q` observation matrix.
//!
//! Window `q` (1-based) covers stream samples `[q N M, (q + L) N M)`; it
//! collects symbols `q - 2 ..= q + L - 1` of every active user through the
//! shifted code matrices. Symbol and gain epochs therefore run from `-1`
//! to `Q + L - 1`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{analytic_covariances, g_vector, ChannelRealization, GainProcess, GenieCovariances};
use crate::codebook::{code_fingerprint, ShiftedCodes, SpreadingCode};
use crate::error::{param_err, Result};
use crate::linalg::{cholesky_lower, ComplexMatrix};
use crate::rng::complex_gaussian;
use crate::waveform::{noise_covariance, ChipPulse, NoiseMode, NoiseStream, PulseAutocorr};
use crate::SystemParams;

/// Earliest symbol epoch any window touches.
pub const FIRST_EPOCH: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Hypothesis {
    /// User 0 silent.
    H0,
    /// User 0 active in the last `q_active` windows.
    H1,
}

/// `(A_0, A_k)` for `k >= 1`: `A_0 = sqrt(snr N0 / Q)`, `A_k = A_0 / sqrt(sir)`.
pub fn amplitudes_from_snr(params: &SystemParams) -> Result<(f64, f64)> {
    for (name, v) in [("snr", params.snr), ("sir", params.sir), ("N0", params.n0)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(param_err!("{name} = {v} must be finite and positive"));
        }
    }
    if params.q == 0 {
        return Err(param_err!("Q must be at least 1"));
    }
    let a0 = libm::sqrt(params.snr * params.n0 / params.q as f64);
    Ok((a0, a0 / libm::sqrt(params.sir)))
}

/// Number of symbol epochs referenced by `Q` windows.
pub fn epoch_span(params: &SystemParams) -> usize {
    params.q + params.l + 1
}

/// BPSK symbols of every user over a contiguous epoch range.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymbolStreams {
    pub first_epoch: i64,
    /// `symbols[k][e]` is user `k`'s symbol at epoch `first_epoch + e`.
    /// Zero entries are allowed and silence that epoch.
    pub symbols: Vec<Vec<i8>>,
}

impl SymbolStreams {
    pub fn get(&self, k: usize, epoch: i64) -> i8 {
        let e = epoch - self.first_epoch;
        if e < 0 {
            return 0;
        }
        self.symbols.get(k).and_then(|s| s.get(e as usize)).copied().unwrap_or(0)
    }

    pub fn users(&self) -> usize {
        self.symbols.len()
    }
}

/// Equiprobable `+-1` symbols for `users` users over `span` epochs.
pub fn draw_symbols<R: Rng + ?Sized>(users: usize, first_epoch: i64, span: usize, rng: &mut R) -> SymbolStreams {
    let symbols = (0..users)
        .map(|_| (0..span).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect();
    SymbolStreams { first_epoch, symbols }
}

/// Everything that fixes the distribution of `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: SystemParams,
    pub hypothesis: Hypothesis,
    pub mode: NoiseMode,
    /// One code per user; user 0 is the user under test.
    pub codes: Vec<SpreadingCode>,
    /// Drop the noise term (oracle tests only).
    pub noise_free: bool,
}

impl ScenarioConfig {
    pub fn new(params: SystemParams, hypothesis: Hypothesis, mode: NoiseMode, codes: Vec<SpreadingCode>) -> Self {
        Self { params, hypothesis, mode, codes, noise_free: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.codes.len() != self.params.k_users {
            return Err(param_err!("{} codes supplied for K = {} users", self.codes.len(), self.params.k_users));
        }
        Ok(())
    }

    /// Whether user 0 transmits in 0-based column `col`.
    pub fn user0_active(&self, col: usize) -> bool {
        self.hypothesis == Hypothesis::H1 && col + self.params.q_active >= self.params.q
    }
}

/// `R = [r(1), ..., r(Q)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub r: ComplexMatrix,
}

impl DataMatrix {
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.r
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.r
    }
}

/// Reproducibility record of one trial.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialSnapshot {
    pub seed: u64,
    pub hypothesis: Hypothesis,
    pub delays: Vec<Vec<f64>>,
    pub symbols: SymbolStreams,
    pub code_fingerprint: String,
}

/// One trial's random draws and the resulting data.
#[derive(Debug, Clone)]
pub struct TrialDraw {
    pub realization: ChannelRealization,
    pub symbols: SymbolStreams,
    pub data: DataMatrix,
}

impl TrialDraw {
    pub fn snapshot(&self, seed: u64, hypothesis: Hypothesis, codes: &[SpreadingCode]) -> TrialSnapshot {
        TrialSnapshot {
            seed,
            hypothesis,
            delays: self.realization.users.iter().map(|u| u.delays.clone()).collect(),
            symbols: self.symbols.clone(),
            code_fingerprint: code_fingerprint(codes),
        }
    }
}

/// A validated configuration with everything reusable across trials
/// precomputed: pulse table, noise factors, Jakes factor, code shifts.
#[derive(Debug, Clone)]
pub struct Scenario {
    config: ScenarioConfig,
    psi: PulseAutocorr,
    rn: ComplexMatrix,
    rn_factor: ComplexMatrix,
    stream: NoiseStream,
    gains: GainProcess,
    shifts: Vec<ShiftedCodes>,
    amplitudes: Vec<f64>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let params = &config.params;
        let dims = params.dims();
        let psi = ChipPulse::for_params(params)?.autocorr();
        let rn = noise_covariance(params, &psi)?;
        let rn_factor = cholesky_lower(&rn)?;
        let stream = NoiseStream::new((params.q + params.l - 1) * dims.nm(), params.m, params.n0, &psi)?;
        let gains = GainProcess::new(epoch_span(params), params.fd)?;
        let shifts = config.codes.iter().map(|c| ShiftedCodes::new(c, &dims)).collect::<Result<Vec<_>>>()?;
        let (a0, ak) = amplitudes_from_snr(params)?;
        let mut amplitudes = vec![ak; params.k_users];
        amplitudes[0] = a0;
        Ok(Self { config, psi, rn, rn_factor, stream, gains, shifts, amplitudes })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn params(&self) -> &SystemParams {
        &self.config.params
    }

    pub fn psi(&self) -> &PulseAutocorr {
        &self.psi
    }

    /// Filtered-noise covariance of one window.
    pub fn noise_covariance(&self) -> &ComplexMatrix {
        &self.rn
    }

    pub fn shifts(&self) -> &[ShiftedCodes] {
        &self.shifts
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// Same precomputation, other hypothesis.
    pub fn with_hypothesis(&self, hypothesis: Hypothesis) -> Self {
        let mut s = self.clone();
        s.config.hypothesis = hypothesis;
        s
    }

    pub fn draw_channel<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChannelRealization> {
        ChannelRealization::draw(&self.amplitudes, &self.gains, FIRST_EPOCH, &self.psi, self.params(), rng)
    }

    pub fn draw_symbols<R: Rng + ?Sized>(&self, rng: &mut R) -> SymbolStreams {
        draw_symbols(self.params().k_users, FIRST_EPOCH, epoch_span(self.params()), rng)
    }

    /// Noise-free part of `R`.
    pub fn signal(&self, realization: &ChannelRealization, symbols: &SymbolStreams) -> Result<ComplexMatrix> {
        let params = self.params();
        let (lnm, q_total) = (params.lnm(), params.q);
        if realization.users.len() != params.k_users || symbols.users() != params.k_users {
            return Err(param_err!("realization or symbols do not cover K = {} users", params.k_users));
        }
        let first_col = |k: usize| -> Option<usize> {
            match (k, self.config.hypothesis) {
                (0, Hypothesis::H0) => None,
                (0, Hypothesis::H1) => Some(q_total - params.q_active),
                _ => Some(0),
            }
        };
        let mut out = ComplexMatrix::zeros(lnm, q_total);
        let mut col = vec![Complex64::new(0.0, 0.0); lnm];
        for (k, shifts) in self.shifts.iter().enumerate() {
            let Some(start) = first_col(k) else { continue };
            // g_k(e) for every epoch the active columns reference.
            let lo = (start as i64 + 1) - 2;
            let hi = q_total as i64 + params.l as i64 - 1;
            let g: Vec<Vec<Complex64>> = (lo..=hi).map(|e| g_vector(k, e, realization)).collect::<Result<_>>()?;
            for c in start..q_total {
                col.fill(Complex64::new(0.0, 0.0));
                let q = c as i64 + 1;
                for ell in params.dims().offsets() {
                    let e = q + ell as i64;
                    let b = symbols.get(k, e);
                    if b != 0 {
                        shifts.accumulate(ell, Complex64::new(f64::from(b), 0.0), &g[(e - lo) as usize], &mut col);
                    }
                }
                for (i, v) in col.iter().enumerate() {
                    out[(i, c)] += *v;
                }
            }
        }
        Ok(out)
    }

    /// Noise windows according to the configured mode.
    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplexMatrix {
        let params = self.params();
        let (lnm, nm) = (params.lnm(), params.nm());
        match self.config.mode {
            NoiseMode::FaithfulStream => {
                let s = self.stream.sample(rng);
                ComplexMatrix::from_fn(lnm, params.q, |i, c| s[c * nm + i])
            }
            NoiseMode::IidBlocks => {
                let mut out = ComplexMatrix::zeros(lnm, params.q);
                let mut z = vec![Complex64::new(0.0, 0.0); lnm];
                for c in 0..params.q {
                    z.iter_mut().for_each(|v| *v = complex_gaussian(rng));
                    for i in 0..lnm {
                        let row = &self.rn_factor.row(i)[..=i];
                        out[(i, c)] = row.iter().zip(&z).map(|(l, v)| l * v).sum();
                    }
                }
                out
            }
        }
    }

    /// `R` for given channel and symbols, adding fresh noise unless the
    /// configuration is noise free.
    pub fn assemble<R: Rng + ?Sized>(
        &self,
        realization: &ChannelRealization,
        symbols: &SymbolStreams,
        rng: &mut R,
    ) -> Result<DataMatrix> {
        let mut r = self.signal(realization, symbols)?;
        if !self.config.noise_free {
            r = r.add(&self.noise(rng))?;
        }
        debug_assert!(r.is_finite());
        Ok(DataMatrix { r })
    }

    /// Channel, symbols and `R` in that draw order.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrialDraw> {
        let realization = self.draw_channel(rng)?;
        let symbols = self.draw_symbols(rng);
        let data = self.assemble(&realization, &symbols, rng)?;
        Ok(TrialDraw { realization, symbols, data })
    }

    /// True `M_w`, `M_z` of a realization.
    pub fn genie_covariances(&self, realization: &ChannelRealization) -> Result<GenieCovariances> {
        analytic_covariances(realization, &self.shifts, &self.rn)
    }
}

/// Noise-free `R` synthesized sample by sample from
/// `r(t) = sum_k sum_e b_k(e) sum_n beta_k(n) g_k(t - e T_b - n T_c; e)`,
/// independently of the code matrices. Works for any positive
/// dimensions, including layouts too small for a detector.
pub fn chip_conv_oracle(
    params: &SystemParams,
    hypothesis: Hypothesis,
    codes: &[SpreadingCode],
    realization: &ChannelRealization,
    symbols: &SymbolStreams,
    psi: &PulseAutocorr,
) -> ComplexMatrix {
    let (n, m, l, q_total) = (params.n as i64, params.m as i64, params.l as i64, params.q as i64);
    let nm = n * m;
    // Absolute sample s of window q sits at local index s - q N M.
    let s_lo = nm;
    let s_hi = (q_total + l) * nm;
    let mut stream_per_user = vec![vec![Complex64::new(0.0, 0.0); (s_hi - s_lo) as usize]; codes.len()];
    for (k, code) in codes.iter().enumerate() {
        let user = &realization.users[k];
        for e in FIRST_EPOCH..=(q_total + l - 1) {
            let b = f64::from(symbols.get(k, e));
            if b == 0.0 {
                continue;
            }
            let ge = (e - realization.first_epoch) as usize;
            for (chip, beta) in code.chips().iter().enumerate() {
                let origin = e * nm + chip as i64 * m;
                for s in s_lo.max(origin)..s_hi {
                    let t = (s - origin) as f64 / m as f64;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (tau, gains) in user.delays.iter().zip(&user.gains) {
                        acc += gains[ge] * psi.value(t - tau);
                    }
                    stream_per_user[k][(s - s_lo) as usize] += acc * (b * beta * user.amplitude);
                }
            }
        }
    }
    let lnm = (l * nm) as usize;
    let mut out = ComplexMatrix::zeros(lnm, q_total as usize);
    for c in 0..q_total as usize {
        let user0_on = hypothesis == Hypothesis::H1 && c + params.q_active >= params.q;
        for (k, stream) in stream_per_user.iter().enumerate() {
            if k == 0 && !user0_on {
                continue;
            }
            // Symbols older than q - 2 are excluded from window q.
            for i in 0..lnm {
                let s = (c as i64 + 1) * nm + i as i64;
                let mut v = stream[(s - s_lo) as usize];
                v -= stale_contribution(k, c as i64 + 1, s, codes, realization, symbols, psi, params);
                out[(i, c)] += v;
            }
        }
    }
    out
}

/// Contribution at sample `s` of symbols before epoch `q - 2`.
#[allow(clippy::too_many_arguments)]
fn stale_contribution(
    k: usize,
    q: i64,
    s: i64,
    codes: &[SpreadingCode],
    realization: &ChannelRealization,
    symbols: &SymbolStreams,
    psi: &PulseAutocorr,
    params: &SystemParams,
) -> Complex64 {
    let (n, m) = (params.n as i64, params.m as i64);
    let user = &realization.users[k];
    let mut acc = Complex64::new(0.0, 0.0);
    for e in FIRST_EPOCH..q - 2 {
        let b = f64::from(symbols.get(k, e));
        if b == 0.0 {
            continue;
        }
        let ge = (e - realization.first_epoch) as usize;
        for (chip, beta) in codes[k].chips().iter().enumerate() {
            let t = (s - e * n * m - chip as i64 * m) as f64 / m as f64;
            for (tau, gains) in user.delays.iter().zip(&user.gains) {
                acc += gains[ge] * psi.value(t - tau) * (b * beta * user.amplitude);
            }
        }
    }
    acc
}
