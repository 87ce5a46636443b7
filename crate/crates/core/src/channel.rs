//! Multipath channels with Jakes-correlated path gains.
//!
//! Each user sees `n_paths` paths with delays uniform on `[0, N-1]` chips
//! and unit-variance complex Gaussian gains whose symbol-rate
//! autocorrelation is `J0(2 pi fd m)`. Gains are constant within a symbol
//! epoch. The user delay is folded into the path delays (it is zero).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::codebook::ShiftedCodes;
use crate::error::{param_err, Error, Result};
use crate::linalg::{cholesky_lower, BandCholesky, ComplexMatrix};
use crate::rng::complex_gaussian;
use crate::waveform::PulseAutocorr;
use crate::SystemParams;

/// Initial diagonal loading of the Jakes Toeplitz matrix.
pub const JAKES_RIDGE_START: f64 = 1e-8;
/// Largest loading tried before giving up.
pub const JAKES_RIDGE_MAX: f64 = 1e-4;

/// `J0(2 pi fd m)`: gain correlation `m` symbols apart.
pub fn jakes_autocorr(lag_symbols: f64, fd: f64) -> f64 {
    libm::j0(2.0 * PI * fd * lag_symbols)
}

/// Path delays (in chips) for every user, i.i.d. uniform on `[0, N-1]`.
pub fn draw_path_delays<R: Rng + ?Sized>(rng: &mut R, params: &SystemParams) -> Vec<Vec<f64>> {
    let max = (params.n - 1) as f64;
    (0..params.k_users)
        .map(|_| (0..params.n_paths).map(|_| rng.random::<f64>() * max).collect())
        .collect()
}

/// Sampler for a length-`span` Jakes gain sequence.
#[derive(Debug, Clone)]
pub struct GainProcess {
    factor: BandCholesky,
    ridge: f64,
}

impl GainProcess {
    pub fn new(span: usize, fd: f64) -> Result<Self> {
        if span == 0 {
            return Err(param_err!("gain process span must be at least 1"));
        }
        let acf: Vec<f64> = (0..span).map(|m| jakes_autocorr(m as f64, fd)).collect();
        let mut ridge = JAKES_RIDGE_START;
        loop {
            match BandCholesky::toeplitz(span, &acf, ridge) {
                Ok(factor) => return Ok(Self { factor, ridge }),
                Err(_) if ridge < JAKES_RIDGE_MAX => ridge *= 10.0,
                Err(e) => {
                    return Err(Error::NumericalDomain(format!("Jakes covariance not factorable: {e}")));
                }
            }
        }
    }

    pub fn span(&self) -> usize {
        self.factor.len()
    }

    /// Diagonal loading that made the factorization succeed.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        let z: Vec<Complex64> = (0..self.span()).map(|_| complex_gaussian(rng)).collect();
        self.factor.apply(&z)
    }
}

pub fn gen_gain_process<R: Rng + ?Sized>(span: usize, fd: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    Ok(GainProcess::new(span, fd)?.sample(rng))
}

/// `r_p[n] = psi(n / M - tau_p)` for `n < D`: one path's sampled response.
pub fn path_response(delay: f64, psi: &PulseAutocorr, params: &SystemParams) -> Vec<f64> {
    let m = params.m as f64;
    (0..params.d()).map(|n| psi.value(n as f64 / m - delay)).collect()
}

/// One user's channel over the simulated epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    pub amplitude: f64,
    pub delays: Vec<f64>,
    /// Sampled response of each path (length `D`).
    pub responses: Vec<Vec<f64>>,
    /// `gains[p][e]`: gain of path `p` at epoch `first_epoch + e`.
    pub gains: Vec<Vec<Complex64>>,
}

/// Channels of all users over epochs `first_epoch .. first_epoch + span`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub users: Vec<UserChannel>,
    pub first_epoch: i64,
}

impl ChannelRealization {
    /// Builds the channel from explicit delays, amplitudes and gains.
    pub fn from_parts(
        amplitudes: &[f64],
        delays: Vec<Vec<f64>>,
        gains: Vec<Vec<Vec<Complex64>>>,
        first_epoch: i64,
        psi: &PulseAutocorr,
        params: &SystemParams,
    ) -> Result<Self> {
        if amplitudes.len() != delays.len() || delays.len() != gains.len() {
            return Err(param_err!("per-user amplitude, delay and gain lists differ in length"));
        }
        let users = amplitudes
            .iter()
            .zip(delays)
            .zip(gains)
            .map(|((&amplitude, delays), gains)| {
                if delays.len() != gains.len() {
                    return Err(param_err!("each path needs both a delay and a gain sequence"));
                }
                let responses = delays.iter().map(|&t| path_response(t, psi, params)).collect();
                Ok(UserChannel { amplitude, delays, responses, gains })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { users, first_epoch })
    }

    /// Draws delays and gains for every user.
    pub fn draw<R: Rng + ?Sized>(
        amplitudes: &[f64],
        gains: &GainProcess,
        first_epoch: i64,
        psi: &PulseAutocorr,
        params: &SystemParams,
        rng: &mut R,
    ) -> Result<Self> {
        let delays = draw_path_delays(rng, params);
        Self::with_delays(amplitudes, delays, gains, first_epoch, psi, params, rng)
    }

    /// Fresh gains for fixed delays.
    pub fn with_delays<R: Rng + ?Sized>(
        amplitudes: &[f64],
        delays: Vec<Vec<f64>>,
        gains: &GainProcess,
        first_epoch: i64,
        psi: &PulseAutocorr,
        params: &SystemParams,
        rng: &mut R,
    ) -> Result<Self> {
        let g = delays.iter().map(|d| d.iter().map(|_| gains.sample(rng)).collect()).collect();
        Self::from_parts(amplitudes, delays, g, first_epoch, psi, params)
    }

    pub fn span(&self) -> usize {
        self.users.first().and_then(|u| u.gains.first()).map_or(0, |g| g.len())
    }

    /// Whether epoch `q` has gains.
    pub fn covers(&self, q: i64) -> bool {
        q >= self.first_epoch && q < self.first_epoch + self.span() as i64
    }
}

/// `g_k(q)[n] = A_k sum_p alpha_{k,p}(q) psi(n / M - tau_{k,p})`.
pub fn g_vector(k: usize, q: i64, realization: &ChannelRealization) -> Result<Vec<Complex64>> {
    let user = realization
        .users
        .get(k)
        .ok_or_else(|| param_err!("user {k} not in realization"))?;
    if !realization.covers(q) {
        return Err(param_err!("epoch {q} outside the simulated span"));
    }
    let e = (q - realization.first_epoch) as usize;
    let d = user.responses.first().map_or(0, |r| r.len());
    let mut g = vec![Complex64::new(0.0, 0.0); d];
    for (resp, gain) in user.responses.iter().zip(&user.gains) {
        let a = gain[e] * user.amplitude;
        for (gn, r) in g.iter_mut().zip(resp) {
            *gn += a * *r;
        }
    }
    Ok(g)
}

/// True interference-plus-noise covariances of one realization.
#[derive(Debug, Clone)]
pub struct GenieCovariances {
    /// Under H0: noise plus interferers.
    pub m_w: ComplexMatrix,
    /// Under H1: `M_w` plus the off-window terms of user 0.
    pub m_z: ComplexMatrix,
}

/// `sum_p A^2 (C r_p)(C r_p)^H` added into `acc`.
fn add_user_term(acc: &mut ComplexMatrix, c: &ComplexMatrix, user: &UserChannel) -> Result<()> {
    let a2 = user.amplitude * user.amplitude;
    for resp in &user.responses {
        let rc: Vec<Complex64> = resp.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let u = c.matvec(&rc)?;
        for i in 0..u.len() {
            if u[i].re == 0.0 && u[i].im == 0.0 {
                continue;
            }
            for j in 0..u.len() {
                acc[(i, j)] += u[i] * u[j].conj() * a2;
            }
        }
    }
    Ok(())
}

/// `M_w = R_n + sum_{k>=1} sum_l C_{k,l} R_{g_k} C_{k,l}^H` and
/// `M_z = M_w + sum_{l != 0} C_{0,l} R_{g_0} C_{0,l}^H`, with
/// `R_{g_k} = A_k^2 sum_p r_p r_p^H` for unit-power symbols and gains.
pub fn analytic_covariances(
    realization: &ChannelRealization,
    codes: &[ShiftedCodes],
    rn: &ComplexMatrix,
) -> Result<GenieCovariances> {
    if codes.len() != realization.users.len() {
        return Err(param_err!("{} code sets for {} users", codes.len(), realization.users.len()));
    }
    let mut m_w = rn.clone();
    for (user, shifts) in realization.users.iter().zip(codes).skip(1) {
        for (_, c) in shifts.iter() {
            add_user_term(&mut m_w, c, user)?;
        }
    }
    let mut m_z = m_w.clone();
    if let (Some(user0), Some(shifts0)) = (realization.users.first(), codes.first()) {
        for (ell, c) in shifts0.iter() {
            if ell != 0 {
                add_user_term(&mut m_z, c, user0)?;
            }
        }
    }
    for (name, m) in [("M_w", &m_w), ("M_z", &m_z)] {
        cholesky_lower(m).map_err(|e| Error::NumericalDomain(format!("{name} is not PD: {e}")))?;
    }
    Ok(GenieCovariances { m_w, m_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{assign_codes, CodeFamily};
    use crate::linalg::hermitian_eigenvalues;
    use crate::rng::trial_rng;
    use crate::waveform::{noise_covariance, ChipPulse};

    #[test]
    fn delays_are_uniform_on_support() {
        let params = SystemParams { k_users: 1, n_paths: 1, ..SystemParams::default() };
        let mut rng = trial_rng(3, 0, 0);
        let max = (params.n - 1) as f64;
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_path_delays(&mut rng, &params)[0][0]).collect();
        assert!(draws.iter().all(|d| (0.0..=max).contains(d)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = max / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - max / 2.0).abs() < 3.0 * se);
        // Kolmogorov-Smirnov against the uniform CDF; 1% critical value.
        let mut sample: Vec<f64> = draws[..10_000].to_vec();
        sample.sort_by(f64::total_cmp);
        let m = sample.len() as f64;
        let ks = sample
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = x / max;
                (f - i as f64 / m).max((i as f64 + 1.0) / m - f)
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.628 / m.sqrt(), "KS = {ks}");
    }

    /// `J0` power series truncated after the x^6 term.
    fn j0_series(x: f64) -> f64 {
        let x2 = x * x;
        1.0 - x2 / 4.0 + x2 * x2 / 64.0 - x2 * x2 * x2 / 2304.0
    }

    #[test]
    fn jakes_values() {
        assert_eq!(jakes_autocorr(0.0, 0.3), 1.0);
        let x = 2.0 * PI * 0.1;
        assert!((jakes_autocorr(1.0, 0.1) - j0_series(x)).abs() < 1e-6);
        assert!((jakes_autocorr(1.0, 0.1) - 0.90372).abs() < 1e-5);
        // First zero of J0 (2.40483) lies between lags 3 and 4 at fd = 0.1.
        assert!(jakes_autocorr(3.0, 0.1) > 0.0 && jakes_autocorr(4.0, 0.1) < 0.0);
        let (mut lo, mut hi) = (2.0, 3.0);
        let full_series = |x: f64| {
            // Converged power series for moderate x.
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..40 {
                term *= -(x * x) / (4.0 * (k * k) as f64);
                sum += term;
            }
            sum
        };
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if full_series(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 2.40483).abs() < 1e-5);
        assert!(libm::j0(lo).abs() < 1e-9);
    }

    #[test]
    fn coherent_gain_limit() {
        let proc = GainProcess::new(8, 0.0).unwrap();
        let mut rng = trial_rng(4, 0, 0);
        let g = proc.sample(&mut rng);
        for v in &g {
            assert!((v - g[0]).norm_sqr().sqrt() < 1e-3);
        }
    }

    #[test]
    fn gain_correlation_and_power() {
        let proc = GainProcess::new(2, 0.1).unwrap();
        let mut rng = trial_rng(5, 0, 0);
        let n = 100_000;
        let mut prods = Vec::with_capacity(n);
        let mut pows = Vec::with_capacity(n);
        for _ in 0..n {
            let g = proc.sample(&mut rng);
            prods.push((g[1] * g[0].conj()).re);
            pows.push(g[0].norm_sqr());
        }
        let stat = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
            (m, (var / v.len() as f64).sqrt())
        };
        let (m, se) = stat(&prods);
        assert!((m - 0.90372).abs() < 3.0 * se, "{m} +- {se}");
        let (p, se) = stat(&pows);
        assert!((p - 1.0).abs() < 3.0 * se, "{p} +- {se}");
    }

    #[test]
    fn gain_statistics_do_not_depend_on_start_epoch() {
        let proc = GainProcess::new(200, 0.05).unwrap();
        let mut rng = trial_rng(6, 0, 0);
        let (mut first, mut second) = (0.0, 0.0);
        let runs = 500;
        for _ in 0..runs {
            let g = proc.sample(&mut rng);
            for i in 0..99 {
                first += (g[i + 1] * g[i].conj()).re;
                second += (g[i + 101] * g[i + 100].conj()).re;
            }
        }
        let want = jakes_autocorr(1.0, 0.05);
        let norm = (runs * 99) as f64;
        assert!((first / norm - want).abs() < 0.05);
        assert!((second / norm - want).abs() < 0.05);
    }

    fn setup() -> (SystemParams, PulseAutocorr) {
        let params = SystemParams { k_users: 3, ..SystemParams::toy() };
        let psi = ChipPulse::for_params(&params).unwrap().autocorr();
        (params, psi)
    }

    fn fixed_gains(n_paths: usize, value: Complex64) -> Vec<Vec<Complex64>> {
        vec![vec![value; 4]; n_paths]
    }

    #[test]
    fn g_vector_examples() {
        let params = SystemParams { m: 2, ..SystemParams::default() };
        let psi = ChipPulse::for_params(&params).unwrap().autocorr();
        let zero = ChannelRealization::from_parts(
            &[1.0],
            vec![vec![0.0, 3.2, 7.7]],
            vec![fixed_gains(3, Complex64::new(0.0, 0.0)).concat().chunks(4).map(|c| c.to_vec()).collect()],
            0,
            &psi,
            &params,
        )
        .unwrap();
        assert!(g_vector(0, 1, &zero).unwrap().iter().all(|z| z.norm_sqr() == 0.0));

        let one = ChannelRealization::from_parts(
            &[1.0],
            vec![vec![0.0]],
            vec![fixed_gains(1, Complex64::new(1.0, 0.0))],
            0,
            &psi,
            &params,
        )
        .unwrap();
        let g = g_vector(0, 2, &one).unwrap();
        assert_eq!(g.len(), params.d());
        let peak = params.p * params.m;
        for (n, v) in g.iter().enumerate() {
            assert_eq!(v.re, psi.value(n as f64 / params.m as f64));
            assert!(v.re <= g[peak].re);
        }
        assert!(g_vector(0, 4, &one).is_err());

        // Superposition over paths.
        let (a, b) = (Complex64::new(0.3, -1.0), Complex64::new(-0.5, 0.25));
        let two = ChannelRealization::from_parts(
            &[2.0],
            vec![vec![1.3, 9.1]],
            vec![vec![vec![a; 4], vec![b; 4]]],
            0,
            &psi,
            &params,
        )
        .unwrap();
        let p1 = ChannelRealization::from_parts(&[2.0], vec![vec![1.3]], vec![vec![vec![a; 4]]], 0, &psi, &params)
            .unwrap();
        let p2 = ChannelRealization::from_parts(&[2.0], vec![vec![9.1]], vec![vec![vec![b; 4]]], 0, &psi, &params)
            .unwrap();
        let g2 = g_vector(0, 0, &two).unwrap();
        let s1 = g_vector(0, 0, &p1).unwrap();
        let s2 = g_vector(0, 0, &p2).unwrap();
        for i in 0..g2.len() {
            assert!((g2[i] - s1[i] - s2[i]).norm_sqr() < 1e-28);
        }
    }

    #[test]
    fn g_vector_support_follows_delays() {
        let params = SystemParams::default();
        let psi = ChipPulse::for_params(&params).unwrap().autocorr();
        let mut rng = trial_rng(8, 0, 0);
        let gp = GainProcess::new(3, 0.1).unwrap();
        for _ in 0..20 {
            let real = ChannelRealization::draw(&[1.0; 1], &gp, 0, &psi, &SystemParams { k_users: 1, ..params }, &mut rng)
                .unwrap();
            let g = g_vector(0, 1, &real).unwrap();
            for (n, v) in g.iter().enumerate() {
                let t = n as f64 / params.m as f64;
                let outside = real.users[0].delays.iter().all(|tau| t - tau <= 0.0 || t - tau >= 2.0 * params.p as f64);
                if outside {
                    assert_eq!(v.norm_sqr(), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_user_interference_is_noise_only() {
        let (params, psi) = setup();
        let params = SystemParams { k_users: 1, ..params };
        let rn = noise_covariance(&params, &psi).unwrap();
        let mut rng = trial_rng(9, 0, 0);
        let codes = assign_codes(CodeFamily::Random, params.n, 1, &mut rng).unwrap();
        let shifts: Vec<ShiftedCodes> = codes.iter().map(|c| ShiftedCodes::new(c, &params.dims()).unwrap()).collect();
        let gp = GainProcess::new(4, params.fd).unwrap();
        let real = ChannelRealization::draw(&[1.0], &gp, 0, &psi, &params, &mut rng).unwrap();
        let cov = analytic_covariances(&real, &shifts, &rn).unwrap();
        assert_eq!(cov.m_w, rn);
    }

    #[test]
    fn self_interference_adds_psd_term() {
        let (params, psi) = setup();
        let rn = noise_covariance(&params, &psi).unwrap();
        let mut rng = trial_rng(10, 0, 0);
        let codes = assign_codes(CodeFamily::Random, params.n, params.k_users, &mut rng).unwrap();
        let shifts: Vec<ShiftedCodes> = codes.iter().map(|c| ShiftedCodes::new(c, &params.dims()).unwrap()).collect();
        let gp = GainProcess::new(4, params.fd).unwrap();
        let real = ChannelRealization::draw(&[1.0, 0.7, 2.0], &gp, 0, &psi, &params, &mut rng).unwrap();
        let cov = analytic_covariances(&real, &shifts, &rn).unwrap();
        let diff = cov.m_z.sub(&cov.m_w).unwrap();
        let ev = hermitian_eigenvalues(&diff).unwrap();
        assert!(*ev.last().unwrap() >= -1e-10 * ev[0]);
        assert!(ev[0] > 0.0);
    }
}
