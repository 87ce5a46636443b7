use crate::error::{param_err, Result};

/// Code/window dimensions: enough to lay out the code matrices.
///
/// These are checked only for positivity, so small illustrative layouts
/// that would not support a detector can still be built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    /// Processing gain (chips per symbol).
    pub n: usize,
    /// Samples per chip.
    pub m: usize,
    /// Window length in symbols.
    pub l: usize,
    /// Chip-pulse duration in chips.
    pub p: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, l: usize, p: usize) -> Result<Self> {
        let dims = Self { n, m, l, p };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(param_err!("N, M and P must be at least 1 (got N={}, M={}, P={})", self.n, self.m, self.p));
        }
        if self.l < 2 {
            return Err(param_err!("window length L must be at least 2 (got {})", self.l));
        }
        Ok(())
    }

    /// Observation dimension `L*N*M`.
    pub fn lnm(&self) -> usize {
        self.l * self.n * self.m
    }

    /// Channel-vector length `(N + 2P) * M`.
    pub fn d(&self) -> usize {
        (self.n + 2 * self.p) * self.m
    }

    /// Samples per symbol, `N*M`.
    pub fn nm(&self) -> usize {
        self.n * self.m
    }

    /// Row count of the banded code matrix, `(L*N + 2P - 1) * M`.
    pub fn banded_rows(&self) -> usize {
        (self.l * self.n + 2 * self.p - 1) * self.m
    }

    /// Symbol offsets that reach a window: `-2 ..= L-1`.
    pub fn offsets(&self) -> core::ops::RangeInclusive<isize> {
        -2..=(self.l as isize - 1)
    }
}

/// All scalar model settings.
///
/// `snr` and `sir` are linear ratios; `snr = Q * A0^2 / N0` and
/// `sir = A0^2 / A1^2` with all interferers at the same amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SystemParams {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub p: usize,
    /// Number of processed windows.
    pub q: usize,
    /// Active users including user 0.
    pub k_users: usize,
    pub alpha: f64,
    /// Doppler spread normalized to the symbol rate.
    pub fd: f64,
    pub n0: f64,
    pub snr: f64,
    pub sir: f64,
    /// Windows (the last ones) in which user 0 is present under H1.
    pub q_active: usize,
    pub n_paths: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n: 15,
            m: 2,
            l: 2,
            p: 4,
            q: 120,
            k_users: 1,
            alpha: 0.3,
            fd: 0.1,
            n0: 1.0,
            snr: 100.0,
            sir: 1.0,
            q_active: 120,
            n_paths: 3,
        }
    }
}

impl SystemParams {
    /// Small layout used by the oracle tests: `N=4, M=1, L=2, P=1, Q=16`.
    pub fn toy() -> Self {
        Self { n: 4, m: 1, l: 2, p: 1, q: 16, q_active: 16, ..Self::default() }
    }

    pub fn dims(&self) -> Dims {
        Dims { n: self.n, m: self.m, l: self.l, p: self.p }
    }

    pub fn lnm(&self) -> usize {
        self.dims().lnm()
    }

    pub fn d(&self) -> usize {
        self.dims().d()
    }

    pub fn nm(&self) -> usize {
        self.n * self.m
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.snr = db_to_linear(snr_db);
        self
    }

    pub fn with_sir_db(mut self, sir_db: f64) -> Self {
        self.sir = db_to_linear(sir_db);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().check()?;
        if self.n_paths == 0 {
            return Err(param_err!("n_paths must be at least 1"));
        }
        if self.k_users == 0 {
            return Err(param_err!("K must be at least 1 (user 0 always exists)"));
        }
        let lnm = self.lnm();
        if self.q < lnm {
            return Err(param_err!("Q = {} must be at least L*N*M = {}", self.q, lnm));
        }
        if (self.l - 1) * self.n <= 2 * self.p {
            return Err(param_err!(
                "(L-1)*N = {} must exceed 2P = {} so that D < L*N*M",
                (self.l - 1) * self.n,
                2 * self.p
            ));
        }
        if 2 * self.p > self.n {
            return Err(param_err!(
                "2P = {} must not exceed N = {}: symbol offsets below -2 would reach the window",
                2 * self.p,
                self.n
            ));
        }
        if self.q_active == 0 || self.q_active > self.q {
            return Err(param_err!("q_active = {} must lie in [1, Q = {}]", self.q_active, self.q));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(param_err!("roll-off alpha = {} must lie in [0, 1]", self.alpha));
        }
        if !(self.fd.is_finite() && self.fd >= 0.0) {
            return Err(param_err!("Doppler fd = {} must be finite and nonnegative", self.fd));
        }
        for (name, v) in [("N0", self.n0), ("snr", self.snr), ("sir", self.sir)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(param_err!("{name} = {v} must be finite and positive"));
            }
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    libm::pow(10.0, db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * libm::log10(x)
}
