//! Oracle checks shared by `mglrt selftest` and the acceptance suite.

use std::fmt;

use mglrt_core::channel::{jakes_autocorr, GainProcess};
use mglrt_core::codebook::{assign_codes, detector_geometry, CodeFamily, CodeGeometry};
use mglrt_core::detectors::{log_mglrt_direct, log_mglrt_fast, DetectorId};
use mglrt_core::montecarlo::{calibrate_threshold, count_exceedances, Executor, SimulationSource};
use mglrt_core::rng::{complex_gaussian, fnv1a, trial_rng};
use mglrt_core::scenario::{chip_conv_oracle, Hypothesis, Scenario, ScenarioConfig};
use mglrt_core::waveform::NoiseMode;
use mglrt_core::{Complex64, ComplexMatrix, SystemParams};

pub const FAST_VS_DIRECT: &str = "fast-vs-direct statistic";
pub const ASSEMBLY: &str = "assembly-vs-convolution";
pub const JAKES: &str = "Jakes autocorrelation";
pub const PFA: &str = "Pfa self-consistency";

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<28} {}  {}", self.name, if self.passed { "PASS" } else { "FAIL" }, self.detail)
    }
}

/// Test hooks that break an invariant on purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Perturb the orthogonal-complement basis used by the fast statistic.
    pub corrupt_geometry: bool,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn random_codes(params: &SystemParams, seed: u64) -> Vec<mglrt_core::codebook::SpreadingCode> {
    let mut rng = trial_rng(seed, fnv1a(b"selftest codes"), 0);
    assign_codes(CodeFamily::Random, params.n, params.k_users, &mut rng).expect("valid code length")
}

fn corrupted(geo: &CodeGeometry) -> CodeGeometry {
    let mut bad = geo.clone();
    let last = bad.ubar.cols() - 1;
    for i in 0..bad.ubar.rows() {
        bad.ubar[(i, last)] *= Complex64::new(1.5, 0.0);
    }
    bad
}

/// Relative deviation of the two MGLRT evaluations on `instances` random
/// cases alternating between toy and default dimensions. Half of the
/// cases use Gaussian data, half use simulated H1 scenarios.
pub fn fast_vs_direct(instances: usize, seed: u64, faults: Faults) -> Check {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let base = if i % 2 == 0 { SystemParams::toy() } else { SystemParams::default() };
        let params = SystemParams { k_users: 1 + i % 3, ..base }.with_snr_db(10.0 + (i % 5) as f64 * 3.0);
        let codes = random_codes(&params, seed ^ i as u64);
        let mut geo = match detector_geometry(&codes[0], &params.dims()) {
            Ok(g) => g,
            Err(e) => return check(FAST_VS_DIRECT, false, format!("instance {i}: {e}")),
        };
        let mut rng = trial_rng(seed, fnv1a(b"selftest data"), i as u64);
        let r = if (i / 2) % 2 == 0 {
            ComplexMatrix::from_fn(params.lnm(), params.q, |_, _| complex_gaussian(&mut rng))
        } else {
            let cfg = ScenarioConfig::new(params, Hypothesis::H1, NoiseMode::FaithfulStream, codes);
            match Scenario::new(cfg).and_then(|s| s.draw(&mut rng)) {
                Ok(d) => d.data.into_inner(),
                Err(e) => return check(FAST_VS_DIRECT, false, format!("instance {i}: {e}")),
            }
        };
        let direct = log_mglrt_direct(&r, &geo);
        if faults.corrupt_geometry {
            geo = corrupted(&geo);
        }
        match (log_mglrt_fast(&r, &geo), direct) {
            (Ok(fast), Ok(direct)) => worst = worst.max(((fast - direct).exp() - 1.0).abs()),
            (Err(e), _) | (_, Err(e)) => return check(FAST_VS_DIRECT, false, format!("instance {i}: {e}")),
        }
    }
    check(FAST_VS_DIRECT, worst <= 1e-8, format!("{instances} instances, max relative deviation {worst:.2e}"))
}

/// Noise-free assembly against direct chip-level convolution on
/// `toy` toy-dimension and `default` default-dimension scenarios.
pub fn assembly_vs_convolution(toy: usize, default: usize, seed: u64) -> Check {
    let mut worst = 0.0f64;
    for i in 0..toy + default {
        let base = if i < toy { SystemParams::toy() } else { SystemParams::default() };
        let mut params = SystemParams { k_users: 1 + i % 3, ..base };
        params.q_active = 1 + (i * 7) % params.q;
        params.sir = 0.25 + 0.15 * (i % 10) as f64;
        params.alpha = [0.1, 0.3, 0.5, 0.7][i % 4];
        let hypothesis = if i % 2 == 0 { Hypothesis::H1 } else { Hypothesis::H0 };
        let mode = if i % 3 == 0 { NoiseMode::IidBlocks } else { NoiseMode::FaithfulStream };
        let codes = random_codes(&params, seed ^ (i as u64).wrapping_mul(31));
        let mut cfg = ScenarioConfig::new(params, hypothesis, mode, codes.clone());
        cfg.noise_free = true;
        let mut rng = trial_rng(seed, fnv1a(b"selftest assembly"), i as u64);
        let result = Scenario::new(cfg).and_then(|s| {
            let d = s.draw(&mut rng)?;
            let oracle = chip_conv_oracle(&params, hypothesis, &codes, &d.realization, &d.symbols, s.psi());
            oracle.sub(d.data.matrix()).map(|m| m.max_abs())
        });
        match result {
            Ok(dev) => worst = worst.max(dev),
            Err(e) => return check(ASSEMBLY, false, format!("scenario {i}: {e}")),
        }
    }
    check(ASSEMBLY, worst <= 1e-10, format!("{} scenarios, max abs deviation {worst:.2e}", toy + default))
}

/// Lag-1 gain correlation against `J0(2 pi fd)` within three standard errors.
pub fn jakes_lag_one(fd: f64, samples: usize, seed: u64) -> Check {
    let process = match GainProcess::new(2, fd) {
        Ok(p) => p,
        Err(e) => return check(JAKES, false, e.to_string()),
    };
    let mut rng = trial_rng(seed, fnv1a(b"selftest jakes"), 0);
    let prods: Vec<f64> = (0..samples)
        .map(|_| {
            let g = process.sample(&mut rng);
            (g[1] * g[0].conj()).re
        })
        .collect();
    let (mean, se) = mean_and_se(&prods);
    let want = jakes_autocorr(1.0, fd);
    let passed = (mean - want).abs() <= 3.0 * se;
    check(JAKES, passed, format!("fd = {fd}: {mean:.5} vs {want:.5} (3 se = {:.5}, {samples} samples)", 3.0 * se))
}

pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Calibrates MGLRT on toy-dimension H0 trials and checks a fresh H0 run
/// against the target within three standard errors of the difference.
pub fn pfa_self_consistency<E: Executor>(trials: u64, seed: u64, executor: &E) -> Check {
    let target = 0.01;
    let params = SystemParams { k_users: 2, ..SystemParams::toy() };
    let run = || -> mglrt_core::Result<(f64, u64)> {
        let codes = random_codes(&params, seed);
        let cfg = ScenarioConfig::new(params, Hypothesis::H0, NoiseMode::FaithfulStream, codes);
        let scenario = Scenario::new(cfg)?;
        let detectors = vec![DetectorId::Mglrt];
        let cal_source = SimulationSource::new(scenario.clone(), detectors.clone(), seed, fnv1a(b"selftest cal"), None)?;
        let eta = calibrate_threshold(&cal_source, trials, target, executor)?.thresholds[0].1;
        let fresh = SimulationSource::new(scenario, detectors, seed, fnv1a(b"selftest fresh"), None)?;
        Ok((eta, count_exceedances(&fresh, &[eta], trials, executor)?[0]))
    };
    match run() {
        Ok((_, hits)) => {
            let p = hits as f64 / trials as f64;
            let tol = 3.0 * (2.0 * target * (1.0 - target) / trials as f64).sqrt();
            check(PFA, (p - target).abs() <= tol, format!("toy K=2: {p:.4} vs {target} (tolerance {tol:.4})"))
        }
        Err(e) => check(PFA, false, e.to_string()),
    }
}

/// The reduced-scale suite run by `mglrt selftest`.
pub fn run_suite<E: Executor>(faults: Faults, executor: &E) -> Vec<Check> {
    vec![
        fast_vs_direct(24, 11, faults),
        assembly_vs_convolution(16, 2, 12),
        jakes_lag_one(0.1, 100_000, 13),
        pfa_self_consistency(10_000, 14, executor),
    ]
}
