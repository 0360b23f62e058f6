//! Simulator and attack toolkit for the Kirchhoff-law–Johnson-noise (KLJN)
//! key exchange with a parasitic periodic voltage source in the loop.
//!
//! * [`noise`]: Gaussian band-limited white noise, Johnson scaling, periodograms.
//! * [`channel`]: the loop itself, one clock period at a time.
//! * [`attacks`]: Eve's low- and high-frequency attacks.
//! * [`experiment`]: success-probability estimation, sweeps and defenses.
//! * [`config`]: TOML configuration and compiled-in presets for the CLI.

pub mod attacks;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
mod fft;
pub mod noise;
pub mod seed;

pub use error::{Error, Result};

/// Boltzmann constant, J/K (exact SI value).
pub const BOLTZMANN: f64 = 1.380649e-23;
