//! Physical constants and unit conversions.

/// Speed of light used by the channel model (m/s).
///
/// The rounded value matches the one conventionally used in THz link
/// simulations; the reference path-loss values in the tests are computed
/// with it.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// dBm to watts.
pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Watts to dBm.
pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// dB to a linear power ratio.
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
