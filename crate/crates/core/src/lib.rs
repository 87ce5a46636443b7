//! Blind detection of a new user in a DS/CDMA uplink observed through a
//! doubly-dispersive (time- and frequency-selective) fading channel.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the signal and
//! channel model, the modified-GLRT detector family with its CFAR
//! normalizations, a genie benchmark, and the Monte Carlo machinery used to
//! calibrate thresholds and estimate detection rates. File formats, the
//! command line front end and parallel execution live in `mglrt-cli`.
//!
//! Time is measured in chip intervals throughout (`T_c = 1`), so a symbol
//! lasts `N` time units and the receiver samples every `1/M`.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod channel;
pub mod codebook;
pub mod detectors;
mod error;
pub mod linalg;
pub mod montecarlo;
mod params;
pub mod rng;
pub mod scenario;
pub mod waveform;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, LqFactorization};
pub use params::{db_to_linear, linear_to_db, Dims, SystemParams};

pub use num_complex::Complex64;
