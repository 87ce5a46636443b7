//! Ready-made configurations for the four standard experiments.
//!
//! All use `N=15, M=2, L=2, Q=120, P=4`, BPSK over three paths, a
//! target false-alarm rate of `1e-2` and SNR from 0 to 30 dB.

use mglrt_core::detectors::DetectorId;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const NAMES: [&str; 4] = ["fig1", "fig2", "fig3", "fig4"];

/// Doppler spread used wherever a preset does not sweep it.
pub const DEFAULT_FD: f64 = 0.1;

fn snr_grid() -> Vec<f64> {
    (0..=10).map(|i| 3.0 * i as f64).collect()
}

fn base() -> ExperimentConfig {
    let mut c = ExperimentConfig { target_pfa: 0.01, ..Default::default() };
    c.system.fd = DEFAULT_FD;
    c.sweep.snr_db = Some(snr_grid());
    c
}

pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let mut c = base();
    match name {
        // MGLRT against the genie, single and multiuser, slow and fast fading.
        "fig1" => {
            c.detectors = vec![DetectorId::Mglrt, DetectorId::Genie];
            c.sweep.k_users = Some(vec![1, 3, 5]);
            c.sweep.fd = Some(vec![0.01, 0.1]);
        }
        // Pulse roll-off.
        "fig2" => {
            c.system.k_users = 3;
            c.sweep.alpha = Some(vec![0.1, 0.3, 0.5, 0.7]);
        }
        // Windows in which the new user is present.
        "fig3" => {
            c.system.k_users = 3;
            c.sweep.q_active = Some(vec![30, 60, 90, 120]);
        }
        // Near-far: interferer power relative to the new user.
        "fig4" => {
            c.system.k_users = 3;
            c.sweep.sir_db = Some(vec![-10.0, 0.0, 10.0]);
        }
        other => {
            return Err(CliError::Config(format!("unknown preset '{other}' (expected one of {})", NAMES.join(", "))))
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in NAMES {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            let p = c.system.params();
            assert_eq!((p.n, p.m, p.l, p.q, p.p, p.n_paths), (15, 2, 2, 120, 4, 3));
            assert_eq!(c.target_pfa, 0.01);
        }
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn preset_grids() {
        let f1 = preset("fig1").unwrap().spec();
        assert_eq!(f1.k_users, vec![1, 3, 5]);
        assert_eq!(f1.grid().len(), 11 * 3 * 2);
        assert_eq!(preset("fig3").unwrap().spec().q_active, vec![30, 60, 90, 120]);
        assert_eq!(preset("fig4").unwrap().spec().sir_db, vec![-10.0, 0.0, 10.0]);
        assert_eq!(preset("fig2").unwrap().spec().alpha, vec![0.1, 0.3, 0.5, 0.7]);
    }
}
