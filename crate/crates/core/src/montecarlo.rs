//! Threshold calibration, rate estimation and parameter sweeps.
//!
//! Thresholds live on the same scale as the detector outputs, i.e. on the
//! log-statistic for the MGLRT family. Trials are identified by
//! `(master seed, stream tag, trial index)` and every trial draws its own
//! generator, so results do not depend on the executor.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::channel::GenieCovariances;
use crate::codebook::{assign_codes, code_fingerprint, detector_geometry, CodeFamily, CodeGeometry, SpreadingCode};
use crate::detectors::{log_mglrt_direct, log_mglrt_fast, log_te, DetectorId, GenieDetector};
use crate::error::{param_err, Error, Result};
use crate::rng::{fnv1a, trial_rng};
use crate::scenario::{Hypothesis, Scenario, ScenarioConfig};
use crate::waveform::NoiseMode;
use crate::{linear_to_db, SystemParams};

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Tag stored with every calibrated threshold.
pub const QUANTILE_METHOD: &str = "type7";

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). Sorts `samples` in place.
pub fn quantile_type7(samples: &mut [f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(param_err!("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(param_err!("quantile level {p} outside [0, 1]"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::NumericalDomain("sample contains NaN".into()));
    }
    samples.sort_by(f64::total_cmp);
    let h = (samples.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(samples.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || samples[lo] == samples[hi] {
        return Ok(samples[lo]);
    }
    Ok(samples[lo] + frac * (samples[hi] - samples[lo]))
}

/// Wilson score interval at 95% for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(param_err!("Wilson interval needs at least one trial"));
    }
    if successes > trials {
        return Err(param_err!("{successes} successes out of {trials} trials"));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z / denom * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    Ok(((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0)))
}

/// Default calibration size: at least 100 expected exceedances.
pub fn default_calibration_trials(target_pfa: f64) -> u64 {
    let needed = libm::ceil(100.0 / target_pfa) as u64;
    needed.max(10_000)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(param_err!("KS test needs two nonempty samples"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = libm::sqrt(n * m / (n + m));
    Ok((d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = libm::exp(-2.0 * jf * jf * lambda * lambda);
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Runs independent trials, returning results in trial order.
pub trait Executor {
    fn map<T, F>(&self, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send;
}

/// Runs trials one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// What one trial produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// One statistic per detector of the source, in the same order.
    pub statistics: Vec<f64>,
    /// `ln T_e` of the realization, when the true covariance was formed.
    pub log_te: Option<f64>,
}

/// A generator of per-trial detector statistics.
pub trait TrialSource: Sync {
    fn detectors(&self) -> &[DetectorId];
    fn trial(&self, index: u64) -> Result<TrialOutcome>;
}

/// Adapts a closure into a single-detector source (stubs and tests).
pub struct FnSource<F> {
    detector: [DetectorId; 1],
    f: F,
}

impl<F: Fn(u64) -> f64 + Sync> FnSource<F> {
    pub fn new(detector: DetectorId, f: F) -> Self {
        Self { detector: [detector], f }
    }
}

impl<F: Fn(u64) -> f64 + Sync> TrialSource for FnSource<F> {
    fn detectors(&self) -> &[DetectorId] {
        &self.detector
    }

    fn trial(&self, index: u64) -> Result<TrialOutcome> {
        Ok(TrialOutcome { statistics: vec![(self.f)(index)], log_te: None })
    }
}

/// Trials of a simulated scenario evaluated with a detector suite that
/// shares each draw.
#[derive(Debug, Clone)]
pub struct SimulationSource {
    scenario: Scenario,
    geometry: CodeGeometry,
    detectors: Vec<DetectorId>,
    master_seed: u64,
    stream: u64,
    log_te_max: Option<f64>,
}

impl SimulationSource {
    pub fn new(
        scenario: Scenario,
        detectors: Vec<DetectorId>,
        master_seed: u64,
        stream: u64,
        log_te_max: Option<f64>,
    ) -> Result<Self> {
        if detectors.is_empty() {
            return Err(param_err!("at least one detector is required"));
        }
        if detectors.contains(&DetectorId::Normalized) && log_te_max.is_none() {
            return Err(param_err!("the normalized detector needs T_e,max"));
        }
        let geometry = detector_geometry(&scenario.config().codes[0], &scenario.params().dims())?;
        Ok(Self { scenario, geometry, detectors, master_seed, stream, log_te_max })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn geometry(&self) -> &CodeGeometry {
        &self.geometry
    }

    fn needs_covariances(&self) -> bool {
        self.detectors.iter().any(|d| d.needs_covariance())
    }
}

impl TrialSource for SimulationSource {
    fn detectors(&self) -> &[DetectorId] {
        &self.detectors
    }

    fn trial(&self, index: u64) -> Result<TrialOutcome> {
        let mut rng = trial_rng(self.master_seed, self.stream, index);
        let draw = self.scenario.draw(&mut rng)?;
        let r = draw.data.matrix();
        let cov: Option<GenieCovariances> =
            if self.needs_covariances() { Some(self.scenario.genie_covariances(&draw.realization)?) } else { None };
        let log_te = cov.as_ref().map(|c| log_te(&c.m_w, &self.geometry)).transpose()?;
        let mut fast = None;
        let mut fast_stat = |geometry: &CodeGeometry| -> Result<f64> {
            if let Some(v) = fast {
                return Ok(v);
            }
            let v = log_mglrt_fast(r, geometry)?;
            fast = Some(v);
            Ok(v)
        };
        let mut statistics = Vec::with_capacity(self.detectors.len());
        for det in &self.detectors {
            let s = match det {
                DetectorId::Mglrt => fast_stat(&self.geometry)?,
                DetectorId::MglrtDirect => log_mglrt_direct(r, &self.geometry)?,
                DetectorId::Cfar => fast_stat(&self.geometry)? - log_te.unwrap_or_default(),
                DetectorId::Normalized => fast_stat(&self.geometry)? - self.log_te_max.unwrap_or_default(),
                DetectorId::Genie => {
                    let cov = cov.as_ref().ok_or_else(|| param_err!("genie needs covariances"))?;
                    GenieDetector::new(cov, &self.geometry)?.statistic(r)?
                }
            };
            statistics.push(s);
        }
        Ok(TrialOutcome { statistics, log_te })
    }
}

/// Runs `n` trials and returns the outcomes in trial order.
pub fn run_trials<S: TrialSource, E: Executor>(source: &S, n: u64, executor: &E) -> Result<Vec<TrialOutcome>> {
    executor.map(n, |i| source.trial(i)).into_iter().collect()
}

/// Statistics of detector column `col` across outcomes.
pub fn column(outcomes: &[TrialOutcome], col: usize) -> Vec<f64> {
    outcomes.iter().map(|o| o.statistics[col]).collect()
}

/// `eta` such that a fraction `target_pfa` of the H0 sample exceeds it.
pub fn threshold_from_samples(samples: &mut [f64], target_pfa: f64) -> Result<f64> {
    check_target(target_pfa)?;
    let eta = quantile_type7(samples, 1.0 - target_pfa)?;
    if !eta.is_finite() {
        return Err(Error::NumericalDomain(format!("calibrated threshold {eta} is not finite")));
    }
    Ok(eta)
}

fn check_target(target_pfa: f64) -> Result<()> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(param_err!("target false-alarm probability {target_pfa} must lie in (0, 1)"));
    }
    Ok(())
}

fn check_calibration_size(n_trials: u64, target_pfa: f64) -> Result<()> {
    check_target(target_pfa)?;
    if (n_trials as f64) < 10.0 / target_pfa {
        return Err(param_err!(
            "{n_trials} calibration trials are too few for P_fa = {target_pfa} (need at least {})",
            libm::ceil(10.0 / target_pfa)
        ));
    }
    Ok(())
}

/// Calibrated thresholds of every detector of an H0 source, plus the
/// largest `ln T_e` seen when covariances were formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: Vec<(DetectorId, f64)>,
    pub max_log_te: Option<f64>,
    pub trials: u64,
}

pub fn calibrate_threshold<S: TrialSource, E: Executor>(
    source: &S,
    n_trials: u64,
    target_pfa: f64,
    executor: &E,
) -> Result<Calibration> {
    check_calibration_size(n_trials, target_pfa)?;
    let outcomes = run_trials(source, n_trials, executor)?;
    let mut thresholds = Vec::new();
    for (col, det) in source.detectors().iter().enumerate() {
        let mut s = column(&outcomes, col);
        thresholds.push((*det, threshold_from_samples(&mut s, target_pfa)?));
    }
    let max_log_te = outcomes.iter().filter_map(|o| o.log_te).reduce(f64::max);
    Ok(Calibration { thresholds, max_log_te, trials: n_trials })
}

/// `ln T_e,max = max ln T_e + ln(safety)` over a set of `ln T_e` values.
pub fn estimate_log_te_max(log_te: impl IntoIterator<Item = f64>, safety: f64) -> Result<f64> {
    if !(safety >= 1.0 && safety.is_finite()) {
        return Err(param_err!("T_e,max safety factor {safety} must be finite and at least 1"));
    }
    let max = log_te
        .into_iter()
        .reduce(f64::max)
        .ok_or_else(|| param_err!("T_e,max needs a nonempty ensemble"))?;
    Ok(max + libm::log(safety))
}

/// `T_e,max` over an ensemble of true interference covariances.
pub fn estimate_te_max(
    ensemble: &[crate::ComplexMatrix],
    geometry: &CodeGeometry,
    safety: f64,
) -> Result<f64> {
    let logs = ensemble.iter().map(|m| log_te(m, geometry)).collect::<Result<Vec<_>>>()?;
    estimate_log_te_max(logs, safety).map(libm::exp)
}

/// Exceedance counts: `(hits, trials)` per detector.
pub fn count_exceedances<S: TrialSource, E: Executor>(
    source: &S,
    thresholds: &[f64],
    n_trials: u64,
    executor: &E,
) -> Result<Vec<u64>> {
    if thresholds.len() != source.detectors().len() {
        return Err(param_err!("{} thresholds for {} detectors", thresholds.len(), source.detectors().len()));
    }
    if n_trials == 0 {
        return Err(param_err!("at least one trial is required"));
    }
    let outcomes = run_trials(source, n_trials, executor)?;
    Ok((0..thresholds.len())
        .map(|col| outcomes.iter().filter(|o| o.statistics[col] > thresholds[col]).count() as u64)
        .collect())
}

/// Scenario knobs that label a curve point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Knobs {
    pub snr_db: f64,
    pub sir_db: f64,
    pub fd: f64,
    pub alpha: f64,
    pub k_users: usize,
    pub q_active: usize,
    pub mode: NoiseMode,
}

impl Knobs {
    pub fn from_params(params: &SystemParams, mode: NoiseMode) -> Self {
        Self {
            snr_db: round_db(linear_to_db(params.snr)),
            sir_db: round_db(linear_to_db(params.sir)),
            fd: params.fd,
            alpha: params.alpha,
            k_users: params.k_users,
            q_active: params.q_active,
            mode,
        }
    }

    /// Applies the knobs to a base parameter set.
    pub fn apply(&self, base: &SystemParams) -> SystemParams {
        SystemParams {
            fd: self.fd,
            alpha: self.alpha,
            k_users: self.k_users,
            q_active: self.q_active,
            ..*base
        }
        .with_snr_db(self.snr_db)
        .with_sir_db(self.sir_db)
    }
}

/// dB values pass through `10^(x/10)` and back; trim the round-off.
fn round_db(x: f64) -> f64 {
    libm::round(x * 1e9) / 1e9
}

/// One measured point of a detection or false-alarm curve.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveRecord {
    pub detector: DetectorId,
    pub snr_db: f64,
    pub sir_db: f64,
    pub fd: f64,
    pub alpha: f64,
    pub k_users: usize,
    pub q_active: usize,
    pub mode: NoiseMode,
    pub threshold: f64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub trials: u64,
    pub seed: u64,
    pub code_fingerprint: String,
}

impl CurveRecord {
    pub fn knobs(&self) -> Knobs {
        Knobs {
            snr_db: self.snr_db,
            sir_db: self.sir_db,
            fd: self.fd,
            alpha: self.alpha,
            k_users: self.k_users,
            q_active: self.q_active,
            mode: self.mode,
        }
    }

    fn new(detector: DetectorId, knobs: &Knobs, threshold: f64, hits: u64, trials: u64, seed: u64, codes: &str) -> Result<Self> {
        let (ci_lo, ci_hi) = wilson_interval(hits, trials)?;
        Ok(Self {
            detector,
            snr_db: knobs.snr_db,
            sir_db: knobs.sir_db,
            fd: knobs.fd,
            alpha: knobs.alpha,
            k_users: knobs.k_users,
            q_active: knobs.q_active,
            mode: knobs.mode,
            threshold,
            rate: hits as f64 / trials as f64,
            ci_lo,
            ci_hi,
            trials,
            seed,
            code_fingerprint: String::from(codes),
        })
    }
}

/// Label of the H0 distribution a threshold is valid for. Under H0 only
/// the interferers and the noise reach the data, so `q_active` never
/// enters, and with a single user neither do SNR, SIR and Doppler. The
/// genie detector is the exception: its statistic uses the H1 covariance,
/// which scales with the SNR.
pub fn family_key(detector: DetectorId, params: &SystemParams, mode: NoiseMode) -> String {
    let k = Knobs::from_params(params, mode);
    let mut key = format!(
        "N={},M={},L={},P={},Q={},paths={},N0={},alpha={},K={},mode={:?}",
        params.n, params.m, params.l, params.p, params.q, params.n_paths, params.n0, k.alpha, k.k_users, mode
    );
    if params.k_users > 1 || detector == DetectorId::Genie {
        key.push_str(&format!(",snr_db={}", k.snr_db));
    }
    if params.k_users > 1 {
        key.push_str(&format!(",sir_db={},fd={}", k.sir_db, k.fd));
    }
    key
}

/// Stream tag of a point. Points that differ only in SNR share their
/// random draws, which keeps curves smooth in SNR.
pub fn point_stream(params: &SystemParams, mode: NoiseMode, hypothesis: Hypothesis) -> u64 {
    let k = Knobs::from_params(params, mode);
    let key = format!(
        "{hypothesis:?}|N={},M={},L={},P={},Q={},paths={},N0={}|sir_db={},fd={},alpha={},K={},q_active={},mode={mode:?}",
        params.n, params.m, params.l, params.p, params.q, params.n_paths, params.n0, k.sir_db, k.fd, k.alpha, k.k_users,
        k.q_active
    );
    fnv1a(key.as_bytes())
}

pub fn calibration_stream(family: &str) -> u64 {
    fnv1a(format!("H0 calibration|{family}").as_bytes())
}

/// One calibrated threshold.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdEntry {
    pub detector: DetectorId,
    pub family: String,
    pub threshold: f64,
    pub target_pfa: f64,
    pub calibration_trials: u64,
    pub method: String,
    /// `ln T_e,max` used by the normalized detector.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub log_te_max: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdTable {
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    pub fn get(&self, detector: DetectorId, family: &str, target_pfa: f64) -> Option<&ThresholdEntry> {
        self.entries.iter().find(|e| e.detector == detector && e.family == family && e.target_pfa == target_pfa)
    }

    /// Inserts or replaces the entry for its `(detector, family, target)`.
    pub fn insert(&mut self, entry: ThresholdEntry) {
        match self
            .entries
            .iter_mut()
            .find(|e| e.detector == entry.detector && e.family == entry.family && e.target_pfa == entry.target_pfa)
        {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !e.threshold.is_finite() {
                return Err(param_err!("threshold for {} / {} is not finite", e.detector, e.family));
            }
            if (e.calibration_trials as f64) < 10.0 / e.target_pfa {
                return Err(param_err!("threshold for {} / {} used too few trials", e.detector, e.family));
            }
        }
        Ok(())
    }
}

/// How the codes of a run are chosen.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CodeChoice {
    Family(CodeFamily),
    Explicit(Vec<Vec<i8>>),
}

impl Default for CodeChoice {
    fn default() -> Self {
        CodeChoice::Family(CodeFamily::default())
    }
}

impl CodeChoice {
    /// Codes of `k_users` users, deterministic in the master seed.
    pub fn codes(&self, n: usize, k_users: usize, master_seed: u64) -> Result<Vec<SpreadingCode>> {
        match self {
            CodeChoice::Family(family) => {
                let mut rng = trial_rng(master_seed, fnv1a(b"codes"), 0);
                assign_codes(*family, n, k_users, &mut rng)
            }
            CodeChoice::Explicit(signs) => {
                if signs.len() < k_users {
                    return Err(param_err!("{} explicit codes for K = {k_users} users", signs.len()));
                }
                signs[..k_users].iter().map(|s| SpreadingCode::from_signs(s)).collect()
            }
        }
    }
}

/// Grid of scenario knobs and the Monte Carlo budget.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepSpec {
    pub base: SystemParams,
    pub mode: NoiseMode,
    pub detectors: Vec<DetectorId>,
    pub snr_db: Vec<f64>,
    pub sir_db: Vec<f64>,
    pub fd: Vec<f64>,
    pub alpha: Vec<f64>,
    pub k_users: Vec<usize>,
    pub q_active: Vec<usize>,
    pub target_pfa: f64,
    pub trials: u64,
    pub calibration_trials: u64,
    /// Multiplier on the largest calibration `T_e`.
    pub te_safety: f64,
    pub master_seed: u64,
    pub codes: CodeChoice,
}

impl SweepSpec {
    /// Single-point spec at the knobs of `base`.
    pub fn single(base: SystemParams, mode: NoiseMode, detectors: Vec<DetectorId>) -> Self {
        let k = Knobs::from_params(&base, mode);
        Self {
            base,
            mode,
            detectors,
            snr_db: vec![k.snr_db],
            sir_db: vec![k.sir_db],
            fd: vec![k.fd],
            alpha: vec![k.alpha],
            k_users: vec![k.k_users],
            q_active: vec![k.q_active],
            target_pfa: 0.01,
            trials: 1000,
            calibration_trials: default_calibration_trials(0.01),
            te_safety: 1.0,
            master_seed: 0,
            codes: CodeChoice::default(),
        }
    }

    /// Every grid point; SNR varies fastest.
    pub fn grid(&self) -> Vec<Knobs> {
        let mut out = Vec::new();
        for &k_users in &self.k_users {
            for &fd in &self.fd {
                for &alpha in &self.alpha {
                    for &sir_db in &self.sir_db {
                        for &q_active in &self.q_active {
                            for &snr_db in &self.snr_db {
                                out.push(Knobs { snr_db, sir_db, fd, alpha, k_users, q_active, mode: self.mode });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(param_err!("sweep needs at least one detector"));
        }
        let axes = [
            ("snr_db", self.snr_db.len()),
            ("sir_db", self.sir_db.len()),
            ("fd", self.fd.len()),
            ("alpha", self.alpha.len()),
            ("k_users", self.k_users.len()),
            ("q_active", self.q_active.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(param_err!("sweep axis {name} is empty"));
        }
        if self.trials == 0 {
            return Err(param_err!("trials must be at least 1"));
        }
        check_calibration_size(self.calibration_trials, self.target_pfa)?;
        if !(self.te_safety >= 1.0 && self.te_safety.is_finite()) {
            return Err(param_err!("te_safety = {} must be finite and at least 1", self.te_safety));
        }
        for knobs in self.grid() {
            knobs.apply(&self.base).validate()?;
        }
        Ok(())
    }

    fn config(&self, params: SystemParams, hypothesis: Hypothesis) -> Result<ScenarioConfig> {
        let codes = self.codes.codes(params.n, params.k_users, self.master_seed)?;
        Ok(ScenarioConfig::new(params, hypothesis, self.mode, codes))
    }

    /// Thresholds for the H0 families of `params`, calibrating (and
    /// caching in `table`) whatever is missing. Detectors that share a
    /// family are calibrated on the same trials.
    pub fn thresholds<E: Executor>(
        &self,
        params: &SystemParams,
        table: &mut ThresholdTable,
        executor: &E,
    ) -> Result<Vec<ThresholdEntry>> {
        let mut groups: Vec<(String, Vec<DetectorId>)> = Vec::new();
        for &det in &self.detectors {
            let family = family_key(det, params, self.mode);
            if table.get(det, &family, self.target_pfa).is_some() {
                continue;
            }
            match groups.iter_mut().find(|(f, _)| *f == family) {
                Some((_, dets)) => dets.push(det),
                None => groups.push((family, vec![det])),
            }
        }
        for (family, missing) in groups {
            // The normalized detector is calibrated on T_CFAR.
            let mut calibrated: Vec<DetectorId> =
                missing.iter().map(|d| if *d == DetectorId::Normalized { DetectorId::Cfar } else { *d }).collect();
            calibrated.sort();
            calibrated.dedup();
            let scenario = Scenario::new(self.config(*params, Hypothesis::H0)?)?;
            let source = SimulationSource::new(scenario, calibrated, self.master_seed, calibration_stream(&family), None)?;
            let cal = calibrate_threshold(&source, self.calibration_trials, self.target_pfa, executor)?;
            let log_te_max = cal.max_log_te.map(|m| estimate_log_te_max([m], self.te_safety)).transpose()?;
            for det in missing {
                let lookup = if det == DetectorId::Normalized { DetectorId::Cfar } else { det };
                let threshold = cal.thresholds.iter().find(|(d, _)| *d == lookup).map(|(_, t)| *t).unwrap_or_default();
                table.insert(ThresholdEntry {
                    detector: det,
                    family: family.clone(),
                    threshold,
                    target_pfa: self.target_pfa,
                    calibration_trials: cal.trials,
                    method: String::from(QUANTILE_METHOD),
                    log_te_max: if det == DetectorId::Normalized { log_te_max } else { None },
                    seed: self.master_seed,
                });
            }
        }
        self.detectors
            .iter()
            .map(|d| {
                let family = family_key(*d, params, self.mode);
                table
                    .get(*d, &family, self.target_pfa)
                    .cloned()
                    .ok_or_else(|| param_err!("no threshold for {d} in family {family}"))
            })
            .collect()
    }

    /// Measures every detector at one grid point under `hypothesis`.
    pub fn measure<E: Executor>(
        &self,
        knobs: &Knobs,
        hypothesis: Hypothesis,
        thresholds: &[ThresholdEntry],
        executor: &E,
    ) -> Result<Vec<CurveRecord>> {
        let params = knobs.apply(&self.base);
        let config = self.config(params, hypothesis)?;
        let fingerprint = code_fingerprint(&config.codes);
        let log_te_max = thresholds.iter().find_map(|t| t.log_te_max);
        let scenario = Scenario::new(config)?;
        let stream = point_stream(&params, self.mode, hypothesis);
        let source = SimulationSource::new(scenario, self.detectors.clone(), self.master_seed, stream, log_te_max)?;
        let etas: Vec<f64> = thresholds.iter().map(|t| t.threshold).collect();
        let hits = count_exceedances(&source, &etas, self.trials, executor)?;
        self.detectors
            .iter()
            .zip(hits)
            .zip(&etas)
            .map(|((det, h), eta)| CurveRecord::new(*det, knobs, *eta, h, self.trials, self.master_seed, &fingerprint))
            .collect()
    }
}

/// `P(statistic > eta)` for one configuration.
pub fn estimate_rate<S: TrialSource, E: Executor>(
    source: &S,
    eta: f64,
    knobs: &Knobs,
    n_trials: u64,
    master_seed: u64,
    code_fingerprint: &str,
    executor: &E,
) -> Result<CurveRecord> {
    if source.detectors().len() != 1 {
        return Err(param_err!("estimate_rate takes a single-detector source"));
    }
    let hits = count_exceedances(source, &[eta], n_trials, executor)?[0];
    CurveRecord::new(source.detectors()[0], knobs, eta, hits, n_trials, master_seed, code_fingerprint)
}

/// Detection rates over the whole grid. Points for which `is_done`
/// returns true are skipped (resuming); each finished point is handed to
/// `on_record` before the next one starts.
pub fn run_sweep<E: Executor>(
    spec: &SweepSpec,
    table: &mut ThresholdTable,
    executor: &E,
    mut on_record: impl FnMut(&CurveRecord) -> Result<()>,
    is_done: impl Fn(&Knobs) -> bool,
) -> Result<Vec<CurveRecord>> {
    spec.validate()?;
    let mut out = Vec::new();
    for knobs in spec.grid() {
        if is_done(&knobs) {
            continue;
        }
        let params = knobs.apply(&spec.base);
        let thresholds = spec.thresholds(&params, table, executor)?;
        for rec in spec.measure(&knobs, Hypothesis::H1, &thresholds, executor)? {
            on_record(&rec)?;
            out.push(rec);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::complex_gaussian;
    use rand::Rng;

    #[test]
    fn type7_quantiles() {
        let mut v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile_type7(&mut v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile_type7(&mut v, 1.0).unwrap(), 4.0);
        assert!((quantile_type7(&mut v, 0.5).unwrap() - 2.5).abs() < 1e-15);
        assert!((quantile_type7(&mut v, 0.9).unwrap() - 3.7).abs() < 1e-12);
        assert!(quantile_type7(&mut [], 0.5).is_err());
        assert!(quantile_type7(&mut v, 1.5).is_err());
    }

    #[test]
    fn wilson_values() {
        let (lo, hi) = wilson_interval(0, 10).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.2775).abs() < 1e-4);
        let (lo, hi) = wilson_interval(100, 10_000).unwrap();
        assert!((lo - 0.00823).abs() < 1e-5 && (hi - 0.01215).abs() < 1e-5, "{lo} {hi}");
        let (lo, hi) = wilson_interval(10, 10).unwrap();
        assert!(lo < 1.0 && hi == 1.0);
        assert!(wilson_interval(1, 0).is_err());
        assert!(wilson_interval(3, 2).is_err());
    }

    #[test]
    fn calibration_sizes() {
        assert_eq!(default_calibration_trials(0.01), 10_000);
        assert_eq!(default_calibration_trials(0.001), 100_000);
        let src = FnSource::new(DetectorId::Mglrt, |_| 1.0);
        assert!(calibrate_threshold(&src, 999, 0.01, &Sequential).is_err());
        assert!(calibrate_threshold(&src, 1000, 0.0, &Sequential).is_err());
    }

    #[test]
    fn constant_stub_threshold() {
        let src = FnSource::new(DetectorId::Mglrt, |_| 2.5);
        let cal = calibrate_threshold(&src, 1000, 0.01, &Sequential).unwrap();
        assert_eq!(cal.thresholds, vec![(DetectorId::Mglrt, 2.5)]);
    }

    fn exponential(i: u64) -> f64 {
        let mut rng = trial_rng(42, 7, i);
        let u: f64 = rng.random();
        -libm::log(1.0 - u)
    }

    #[test]
    fn exponential_stub_threshold() {
        let src = FnSource::new(DetectorId::Mglrt, exponential);
        let a = calibrate_threshold(&src, 100_000, 0.01, &Sequential).unwrap();
        let eta = a.thresholds[0].1;
        assert!((eta - 4.6052).abs() < 0.15, "{eta}");
        let b = calibrate_threshold(&src, 100_000, 0.01, &Sequential).unwrap();
        assert_eq!(eta.to_bits(), b.thresholds[0].1.to_bits());
    }

    #[test]
    fn rate_limits_and_self_consistency() {
        let knobs = Knobs::from_params(&SystemParams::default(), NoiseMode::default());
        let src = FnSource::new(DetectorId::Mglrt, exponential);
        let all = estimate_rate(&src, f64::NEG_INFINITY, &knobs, 100, 0, "", &Sequential).unwrap();
        assert_eq!(all.rate, 1.0);
        let none = estimate_rate(&src, f64::INFINITY, &knobs, 100, 0, "", &Sequential).unwrap();
        assert_eq!(none.rate, 0.0);
        assert!(none.ci_lo <= none.rate && none.rate <= none.ci_hi);

        let eta = calibrate_threshold(&src, 10_000, 0.01, &Sequential).unwrap().thresholds[0].1;
        let fresh = FnSource::new(DetectorId::Mglrt, |i| exponential(i + 1_000_000));
        let rec = estimate_rate(&fresh, eta, &knobs, 10_000, 0, "", &Sequential).unwrap();
        assert!(rec.ci_lo <= 0.01 && 0.01 <= rec.ci_hi, "{rec:?}");
    }

    #[test]
    fn te_max_properties() {
        use crate::codebook::CodeGeometry;
        use crate::ComplexMatrix;
        let c = ComplexMatrix::from_fn(4, 1, |i, _| crate::Complex64::new(if i == 3 { 1.0 } else { 0.0 }, 0.0));
        let geo = CodeGeometry::from_matrix(c).unwrap();
        let id = ComplexMatrix::identity(4);
        assert!((estimate_te_max(core::slice::from_ref(&id), &geo, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let four = id.scale(crate::Complex64::new(4.0, 0.0));
        let te = estimate_te_max(&[id.clone(), four.clone()], &geo, 1.0).unwrap();
        assert!((te - libm::pow(4.0, geo.d as f64)).abs() < 1e-9);
        let bigger = estimate_te_max(&[id.clone(), four, id.scale(crate::Complex64::new(0.5, 0.0))], &geo, 1.0).unwrap();
        assert!(bigger >= te);
        assert!(estimate_te_max(&[], &geo, 1.0).is_err());
        assert!(estimate_log_te_max([1.0], 0.5).is_err());
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = trial_rng(5, 5, 0);
        let a: Vec<f64> = (0..2000).map(|_| complex_gaussian(&mut rng).re).collect();
        let b: Vec<f64> = (0..2000).map(|_| complex_gaussian(&mut rng).re).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        assert!(ks_two_sample(&a, &b).unwrap().1 > 0.01);
        assert!(ks_two_sample(&a, &c).unwrap().1 < 1e-6);
        let (d, p) = ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((d, p), (0.0, 1.0));
    }

    #[test]
    fn executors_are_interchangeable() {
        struct Reversed;
        impl Executor for Reversed {
            fn map<T, F>(&self, n: u64, f: F) -> Vec<T>
            where
                T: Send,
                F: Fn(u64) -> T + Sync + Send,
            {
                let mut v: Vec<(u64, T)> = (0..n).rev().map(|i| (i, f(i))).collect();
                v.reverse();
                v.into_iter().map(|(_, t)| t).collect()
            }
        }
        let src = FnSource::new(DetectorId::Mglrt, exponential);
        let a = count_exceedances(&src, &[1.0], 500, &Sequential).unwrap();
        let b = count_exceedances(&src, &[1.0], 500, &Reversed).unwrap();
        assert_eq!(a, b);
    }

    fn toy_spec() -> SweepSpec {
        let base = SystemParams { alpha: 0.5, ..SystemParams::toy() };
        let mut spec = SweepSpec::single(base, NoiseMode::FaithfulStream, vec![DetectorId::Mglrt, DetectorId::Genie]);
        spec.snr_db = vec![0.0, 10.0];
        spec.k_users = vec![1, 2];
        spec.trials = 50;
        spec.calibration_trials = 1000;
        spec.target_pfa = 0.05;
        spec.master_seed = 9;
        spec.codes = CodeChoice::Family(CodeFamily::Random);
        spec
    }

    #[test]
    fn sweep_is_deterministic_and_resumable() {
        let spec = toy_spec();
        let mut table = ThresholdTable::default();
        let mut seen = 0;
        let recs = run_sweep(&spec, &mut table, &Sequential, |_| {
            seen += 1;
            Ok(())
        }, |_| false)
        .unwrap();
        assert_eq!(recs.len(), spec.grid().len() * 2);
        assert_eq!(seen, recs.len());
        for r in &recs {
            assert!(r.ci_lo <= r.rate && r.rate <= r.ci_hi);
        }
        // With K=1 the MGLRT family is shared across SNR; the genie and
        // every K=2 point get one family per SNR.
        assert_eq!(table.entries.len(), 1 + 2 + 2 * 2);
        let mut table2 = ThresholdTable::default();
        let again = run_sweep(&spec, &mut table2, &Sequential, |_| Ok(()), |_| false).unwrap();
        assert_eq!(recs, again);
        assert_eq!(table, table2);
        let first = recs[0].knobs();
        let resumed = run_sweep(&spec, &mut table2, &Sequential, |_| Ok(()), |k| *k == first).unwrap();
        assert_eq!(resumed.as_slice(), &recs[2..]);
    }

    #[test]
    fn invalid_sweeps_are_rejected() {
        let mut spec = toy_spec();
        spec.snr_db.clear();
        assert!(spec.validate().is_err());
        let mut spec = toy_spec();
        spec.q_active = vec![99];
        assert!(spec.validate().is_err());
        let mut spec = toy_spec();
        spec.calibration_trials = 10;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn knobs_round_trip_through_params() {
        let base = SystemParams::default();
        let k = Knobs { snr_db: 12.0, sir_db: -10.0, fd: 0.01, alpha: 0.7, k_users: 3, q_active: 60, mode: NoiseMode::IidBlocks };
        assert_eq!(Knobs::from_params(&k.apply(&base), NoiseMode::IidBlocks), k);
    }

    #[test]
    fn early_columns_under_partial_activation_look_like_h0() {
        // Columns before activation are H0 columns: the statistic on that
        // block has the same law under both hypotheses.
        use crate::scenario::ScenarioConfig;
        let params = SystemParams { q: 24, q_active: 8, snr: 1000.0, ..SystemParams::toy() };
        let mut rng = trial_rng(3, 3, 3);
        let codes = assign_codes(CodeFamily::Random, params.n, 1, &mut rng).unwrap();
        let geo = detector_geometry(&codes[0], &params.dims()).unwrap();
        let block = |hyp: Hypothesis, stream: u64| -> Vec<f64> {
            let sc = Scenario::new(ScenarioConfig::new(params, hyp, NoiseMode::FaithfulStream, codes.clone())).unwrap();
            (0..1500)
                .map(|i| {
                    let d = sc.draw(&mut trial_rng(1, stream, i)).unwrap();
                    let r = d.data.matrix().columns(0..16);
                    log_mglrt_fast(&r, &geo).unwrap()
                })
                .collect()
        };
        let h0 = block(Hypothesis::H0, 1);
        let h1 = block(Hypothesis::H1, 2);
        assert!(ks_two_sample(&h0, &h1).unwrap().1 > 0.01);
    }
}
