//! Simulator and optimizer for a wideband THz cell-free massive MIMO downlink
//! assisted by several active reconfigurable intelligent surfaces (RIS), with
//! low-resolution DACs at the access points.
//!
//! The crate is organized bottom-up:
//!
//! - [`channel`]: subcarrier grid, THz path loss, array responses, LoS channels
//!   and node placement.
//! - [`quantization`]: additive quantization noise model of the DACs.
//! - [`metrics`]: composite channels, SINR (three algebraically distinct
//!   routes), SE/EE, the power-consumption model and constraint residuals.
//! - [`conic`]: a small cone-program abstraction (zero, nonnegative, second
//!   order, rotated second order and exponential cones) plus complex-to-real
//!   embedding helpers.
//! - [`optimizer`]: quadratic transform, SCA surrogates for precoders and RIS
//!   coefficients, MMSE receive filters and the alternating outer loop.
//! - [`harness`]: scenario configuration, baseline methods, Monte Carlo sweeps
//!   and CSV output.
//! - [`validate`]: the invariant suite exposed through `cfris validate`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod config;
pub mod conic;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod quantization;
pub mod rng;
pub mod units;
pub mod validate;

pub use config::{SolverOptions, SystemConfig, UpaDims};
pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
