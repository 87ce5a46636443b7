//! Experiment configuration files (TOML or JSON).

use std::fmt;
use std::path::{Path, PathBuf};

use mglrt_core::codebook::CodeFamily;
use mglrt_core::detectors::DetectorId;
use mglrt_core::montecarlo::{default_calibration_trials, CodeChoice, SweepSpec};
use mglrt_core::waveform::NoiseMode;
use mglrt_core::{db_to_linear, SystemParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything one experiment needs. Absent keys take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: NoiseMode,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<DetectorId>,
    #[serde(default = "default_target_pfa")]
    pub target_pfa: f64,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub trials: TrialsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub codes: CodesSection,
}

fn default_detectors() -> Vec<DetectorId> {
    vec![DetectorId::Mglrt]
}

fn default_target_pfa() -> f64 {
    0.01
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: NoiseMode::default(),
            detectors: default_detectors(),
            target_pfa: default_target_pfa(),
            system: SystemSection::default(),
            sweep: SweepSection::default(),
            trials: TrialsSection::default(),
            output: OutputSection::default(),
            codes: CodesSection::default(),
        }
    }
}

/// Model parameters. `q_active` defaults to `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub p: usize,
    pub q: usize,
    pub k_users: usize,
    pub n_paths: usize,
    pub alpha: f64,
    pub fd: f64,
    pub n0: f64,
    pub snr_db: f64,
    pub sir_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_active: Option<usize>,
}

impl Default for SystemSection {
    fn default() -> Self {
        let p = SystemParams::default();
        Self {
            n: p.n,
            m: p.m,
            l: p.l,
            p: p.p,
            q: p.q,
            k_users: p.k_users,
            n_paths: p.n_paths,
            alpha: p.alpha,
            fd: p.fd,
            n0: p.n0,
            snr_db: 20.0,
            sir_db: 0.0,
            q_active: None,
        }
    }
}

impl SystemSection {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            n: self.n,
            m: self.m,
            l: self.l,
            p: self.p,
            q: self.q,
            k_users: self.k_users,
            n_paths: self.n_paths,
            alpha: self.alpha,
            fd: self.fd,
            n0: self.n0,
            snr: db_to_linear(self.snr_db),
            sir: db_to_linear(self.sir_db),
            q_active: self.q_active.unwrap_or(self.q),
        }
    }
}

/// Grids swept around the system values; an absent axis holds the
/// system value only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sir_db: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_users: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_active: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialsSection {
    /// Trials per grid point.
    pub detection: u64,
    /// H0 calibration trials; defaults to `max(1e4, 100 / target_pfa)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<u64>,
    /// Multiplier on the largest `T_e` seen during calibration.
    pub te_safety: f64,
}

impl Default for TrialsSection {
    fn default() -> Self {
        Self { detection: 1000, calibration: None, te_safety: 1.0 }
    }
}

/// Output locations; file names are relative to `dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub csv: String,
    /// Structured records, one JSON object per line. Empty disables it.
    pub jsonl: String,
    pub thresholds: String,
    pub snapshot: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            csv: "curves.csv".into(),
            jsonl: "curves.jsonl".into(),
            thresholds: "thresholds.json".into(),
            snapshot: "snapshot.json".into(),
        }
    }
}

impl OutputSection {
    pub fn csv_path(&self) -> PathBuf {
        self.dir.join(&self.csv)
    }

    pub fn jsonl_path(&self) -> Option<PathBuf> {
        (!self.jsonl.is_empty()).then(|| self.dir.join(&self.jsonl))
    }

    pub fn thresholds_path(&self) -> PathBuf {
        self.dir.join(&self.thresholds)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.dir.join(&self.snapshot)
    }
}

/// Spreading codes: a generated family, or explicit `±1` lists (user 0
/// first) for exact reproduction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodesSection {
    pub family: CodeFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<Vec<i8>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    /// By extension, falling back to sniffing the first character.
    pub fn detect(path: &Path, text: &str) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            Some("toml") => Format::Toml,
            _ if text.trim_start().starts_with('{') => Format::Json,
            _ => Format::Toml,
        }
    }
}

/// A configuration problem, with the line it was found on when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source, line, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl ExperimentConfig {
    pub fn from_str(text: &str, format: Format, source: &str) -> Result<Self, ConfigError> {
        let parsed = match format {
            Format::Toml => toml::from_str::<Self>(text).map_err(|e| {
                let line = e.span().map(|s| line_of_offset(text, s.start));
                ConfigError { source: source.into(), line, message: e.message().trim().to_string() }
            }),
            Format::Json => serde_json::from_str::<Self>(text).map_err(|e| ConfigError {
                source: source.into(),
                line: (e.line() > 0).then_some(e.line()),
                message: strip_json_position(&e.to_string()),
            }),
        }?;
        parsed.validate().map_err(|(key, message)| ConfigError {
            source: source.into(),
            line: key.and_then(|k| line_of_key(text, k)),
            message,
        })?;
        Ok(parsed)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text, Format::detect(path, &text), &path.display().to_string())
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_string(&self, format: Format) -> String {
        match format {
            Format::Toml => toml::to_string(self).expect("configuration serializes to TOML"),
            Format::Json => serde_json::to_string_pretty(self).expect("configuration serializes to JSON"),
        }
    }

    pub fn calibration_trials(&self) -> u64 {
        self.trials.calibration.unwrap_or_else(|| default_calibration_trials(self.target_pfa))
    }

    /// Checks every invariant; on failure names the offending key.
    pub fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        if !(self.target_pfa > 0.0 && self.target_pfa < 1.0) {
            return Err((Some("target_pfa"), format!("target_pfa = {} must lie in (0, 1)", self.target_pfa)));
        }
        if self.detectors.is_empty() {
            return Err((Some("detectors"), "at least one detector is required".into()));
        }
        if let Some(codes) = &self.codes.explicit {
            if codes.iter().any(|c| c.len() != self.system.n) {
                return Err((Some("explicit"), format!("every explicit code must have N = {} chips", self.system.n)));
            }
        }
        self.system.params().validate().map_err(|e| (None, e.to_string()))?;
        self.spec().validate().map_err(|e| (None, e.to_string()))
    }

    pub fn spec(&self) -> SweepSpec {
        let base = self.system.params();
        let mut spec = SweepSpec::single(base, self.mode, self.detectors.clone());
        let s = &self.sweep;
        if let Some(v) = &s.snr_db {
            spec.snr_db = v.clone();
        }
        if let Some(v) = &s.sir_db {
            spec.sir_db = v.clone();
        }
        if let Some(v) = &s.fd {
            spec.fd = v.clone();
        }
        if let Some(v) = &s.alpha {
            spec.alpha = v.clone();
        }
        if let Some(v) = &s.k_users {
            spec.k_users = v.clone();
        }
        if let Some(v) = &s.q_active {
            spec.q_active = v.clone();
        }
        spec.target_pfa = self.target_pfa;
        spec.trials = self.trials.detection;
        spec.calibration_trials = self.calibration_trials();
        spec.te_safety = self.trials.te_safety;
        spec.master_seed = self.seed;
        spec.codes = match &self.codes.explicit {
            Some(codes) => CodeChoice::Explicit(codes.clone()),
            None => CodeChoice::Family(self.codes.family),
        };
        spec
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line that assigns `key` in either syntax.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| {
        let t = l.trim_start();
        t.starts_with(&quoted) || (t.starts_with(key) && t[key.len()..].trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn strip_json_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
