//! Spectral-Galerkin laboratory for a slow-fast stochastic wave /
//! reaction-diffusion system on an interval: exact per-mode linear flows,
//! exact stochastic convolutions, the multiscale and averaged integrators, and
//! a common-random-number Monte Carlo harness that measures the weak error of
//! the averaging approximation and its first-order corrector.

// Mode loops index several arrays at once; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod fast;
pub mod harness;
pub mod noise;
pub mod nonlinearity;
pub mod rng;
pub mod slow;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result, Violation};
pub use spectral::{Collocation, SpectralBasis, SpectralField, WaveState};
