//! Low-resolution DACs under the additive quantization noise (AQN) model.
//!
//! A `b`-bit DAC is replaced by the linear gain `sqrt(1 - alpha)` plus
//! uncorrelated noise whose covariance is `alpha * diag(sum_k f_k f_k^H)`.

use nalgebra::DVector;

use crate::error::{invalid_arg, Result};
use crate::C64;

/// Measured distortion factors for 1..=5 bits.
const DISTORTION_TABLE: [f64; 5] = [0.3634, 0.1175, 0.03454, 0.009497, 0.002499];

/// Distortion factor `alpha` of a `bits`-bit quantizer. Table values up to 5
/// bits, `(pi sqrt(3) / 2) 2^(-2 bits)` beyond.
pub fn distortion_factor(bits: u32) -> Result<f64> {
    match bits {
        0 => invalid_arg("DAC resolution must be at least one bit"),
        1..=5 => Ok(DISTORTION_TABLE[bits as usize - 1]),
        _ => Ok(std::f64::consts::PI * 3f64.sqrt() / 2.0 * 2f64.powi(-2 * bits as i32)),
    }
}

/// Per-AP DAC parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DacModel {
    pub bits_per_ap: Vec<u32>,
    pub alpha: Vec<f64>,
    /// `sqrt(1 - alpha)`.
    pub lambda: Vec<f64>,
}

impl DacModel {
    pub fn new(bits_per_ap: Vec<u32>) -> Result<Self> {
        let alpha = bits_per_ap.iter().map(|&b| distortion_factor(b)).collect::<Result<Vec<_>>>()?;
        let lambda = alpha.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(Self { bits_per_ap, alpha, lambda })
    }

    pub fn uniform(aps: usize, bits: u32) -> Result<Self> {
        Self::new(vec![bits; aps])
    }

    /// Ideal converters (`alpha = 0`); used by tests and analytic checks.
    pub fn ideal(aps: usize) -> Self {
        Self { bits_per_ap: vec![u32::MAX; aps], alpha: vec![0.0; aps], lambda: vec![1.0; aps] }
    }

    /// Overrides the distortion factors directly.
    pub fn with_alpha(alpha: Vec<f64>) -> Self {
        let lambda = alpha.iter().map(|a| (1.0 - a).sqrt()).collect();
        Self { bits_per_ap: vec![0; alpha.len()], alpha, lambda }
    }
}

/// Diagonal of the quantization-noise covariance of one AP on one
/// subcarrier: `alpha * diag(sum_k f_k f_k^H)`.
pub fn quantization_noise_cov<'a, I>(precoders: I, alpha: f64) -> DVector<f64>
where
    I: IntoIterator<Item = &'a DVector<C64>>,
{
    let mut iter = precoders.into_iter().peekable();
    let n = iter.peek().map_or(0, |f| f.len());
    let mut diag = DVector::zeros(n);
    for f in iter {
        for (d, x) in diag.iter_mut().zip(f.iter()) {
            *d += x.norm_sqr();
        }
    }
    diag * alpha
}
