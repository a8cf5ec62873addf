//! Scenario configuration.
//!
//! [`SystemConfig`] is serialized as TOML with field names identical to the
//! struct fields below. The `schema_version` key is mandatory in files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{db_to_lin, dbm_to_w};

pub const SCHEMA_VERSION: u32 = 1;

/// Element counts of a uniform planar array along its two axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpaDims {
    pub y: usize,
    pub z: usize,
}

impl UpaDims {
    pub fn new(y: usize, z: usize) -> Self {
        Self { y, z }
    }

    pub fn count(&self) -> usize {
        self.y * self.z
    }

    /// Nearest-to-square factorization `n = y * z` with `y >= z`.
    pub fn near_square(n: usize) -> Self {
        let mut z = (n as f64).sqrt().floor() as usize;
        while z > 1 && !n.is_multiple_of(z) {
            z -= 1;
        }
        let z = z.max(1);
        Self { y: n / z, z }
    }
}

/// Stopping rules and caps for the alternating optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Absolute tolerance on the objective for the inner SCA loops.
    pub eps_inner: f64,
    /// Relative tolerance on the objective for the outer loop.
    pub eps_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Attempt to restore the minimum-rate constraint when the initial point
    /// violates it.
    pub rate_continuation: bool,
    pub backend_tol: f64,
    pub backend_max_iter: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_inner: 1e-4,
            eps_outer: 1e-4,
            max_inner: 30,
            max_outer: 50,
            rate_continuation: true,
            backend_tol: 1e-7,
            backend_max_iter: 200,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_inner > 0.0 && self.eps_outer > 0.0 && self.backend_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.max_inner == 0 || self.max_outer == 0 || self.backend_max_iter == 0 {
            return Err(Error::Config("solver iteration caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// All physical and algorithmic parameters of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub schema_version: u32,
    /// Carrier frequency (Hz).
    pub carrier_hz: f64,
    /// Total bandwidth (Hz).
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
    pub aps: usize,
    pub ap_array: UpaDims,
    pub users: usize,
    pub user_antennas: usize,
    pub ris_array: UpaDims,
    /// One entry per RIS; the RIS count is the length of this list.
    pub ris_positions: Vec<[f64; 3]>,
    /// Minimum rate per user and subcarrier (bit/s/Hz).
    pub min_rate_bps_hz: f64,
    /// Maximum RIS element amplitude (linear, not squared).
    pub beta_max: f64,
    /// Maximum transmit power per AP (W).
    pub ap_power_max_w: f64,
    /// Maximum reflected power per RIS (W).
    pub ris_power_max_w: f64,
    pub eta_ap: f64,
    pub eta_ris: f64,
    /// Molecular absorption coefficient (1/m).
    pub absorption_per_m: f64,
    pub noise_density_dbm_hz: f64,
    /// RIS thermal noise power per element (W). `None` uses the per-subcarrier
    /// user noise power.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ris_noise_w: Option<f64>,
    /// DAC resolution shared by all APs.
    pub dac_bits: u32,
    /// Power of one RF chain at an AP (W).
    pub ap_rf_chain_w: f64,
    /// Static power per user (W).
    pub user_static_w: f64,
    /// Backhaul power per AP (W).
    pub backhaul_w: f64,
    /// Control/switch circuit power per RIS element (W).
    pub ris_circuit_w: f64,
    /// DC bias power per RIS element (W).
    pub ris_dc_w: f64,
    /// SE-EE weight; 1 maximizes EE, 0 maximizes SE.
    pub kappa: f64,
    /// x-offset of the user square (m).
    pub user_x_offset_m: f64,
    /// Side of the square user area (m).
    pub user_area_m: f64,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SystemConfig {
    /// Full-scale profile. `ap_array` (4x4) and `ap_power_max_w` (30 dBm)
    /// are not given by the reference parameter table and are chosen here.
    pub fn paper() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            carrier_hz: 0.14e12,
            bandwidth_hz: 5e9,
            subcarriers: 4,
            aps: 3,
            ap_array: UpaDims::new(4, 4),
            users: 4,
            user_antennas: 4,
            ris_array: UpaDims::new(8, 8),
            ris_positions: vec![[5.0, 3.0, 6.0], [8.0, 3.0, 6.0]],
            min_rate_bps_hz: 0.1,
            beta_max: db_to_lin(20.0).sqrt(),
            ap_power_max_w: dbm_to_w(30.0),
            ris_power_max_w: dbm_to_w(20.0),
            eta_ap: 0.9,
            eta_ris: 0.8,
            absorption_per_m: 6e-5,
            noise_density_dbm_hz: -174.0,
            ris_noise_w: None,
            dac_bits: 1,
            ap_rf_chain_w: 31.6e-3,
            user_static_w: 0.1,
            backhaul_w: 0.825,
            ris_circuit_w: dbm_to_w(-10.0),
            ris_dc_w: dbm_to_w(-5.0),
            kappa: 1.0,
            user_x_offset_m: 5.0,
            user_area_m: 3.0,
            seed: 1,
            solver: SolverOptions::default(),
        }
    }

    /// Reduced profile for CI and quick experiments.
    pub fn desk() -> Self {
        Self {
            subcarriers: 2,
            aps: 2,
            ap_array: UpaDims::new(2, 2),
            users: 2,
            user_antennas: 2,
            ris_array: UpaDims::new(4, 4),
            ..Self::paper()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown profile '{other}' (expected desk|paper)"))),
        }
    }

    pub fn ap_antennas(&self) -> usize {
        self.ap_array.count()
    }

    pub fn ris_elements(&self) -> usize {
        self.ris_array.count()
    }

    pub fn ris_count(&self) -> usize {
        self.ris_positions.len()
    }

    /// Width of one subcarrier (Hz).
    pub fn subcarrier_bw_hz(&self) -> f64 {
        self.bandwidth_hz / self.subcarriers as f64
    }

    /// DAC sampling rate: twice the subcarrier bandwidth.
    pub fn sampling_rate_hz(&self) -> f64 {
        2.0 * self.subcarrier_bw_hz()
    }

    /// Receiver noise power on one subcarrier (W).
    pub fn user_noise_w(&self) -> f64 {
        dbm_to_w(self.noise_density_dbm_hz) * self.subcarrier_bw_hz()
    }

    pub fn ris_noise_power_w(&self) -> f64 {
        self.ris_noise_w.unwrap_or_else(|| self.user_noise_w())
    }

    /// 2^R - 1, the SINR floor implied by the minimum rate.
    pub fn sinr_floor(&self) -> f64 {
        self.min_rate_bps_hz.exp2() - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.carrier_hz > 0.0 && self.bandwidth_hz > 0.0) {
            return bad("carrier_hz and bandwidth_hz must be positive");
        }
        if self.subcarriers == 0 || self.users == 0 || self.user_antennas == 0 {
            return bad("subcarriers, users and user_antennas must be >= 1");
        }
        if self.aps < 2 {
            return bad("aps must be >= 2 (AP placement is undefined for a single AP)");
        }
        if self.ap_array.count() == 0 || self.ris_array.count() == 0 {
            return bad("array dimensions must be >= 1");
        }
        if self.ris_positions.is_empty() {
            return bad("at least one RIS position is required");
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return bad("kappa must lie in [0, 1]");
        }
        if !(self.eta_ap > 0.0 && self.eta_ap <= 1.0 && self.eta_ris > 0.0 && self.eta_ris <= 1.0) {
            return bad("amplifier efficiencies must lie in (0, 1]");
        }
        if self.dac_bits == 0 {
            return bad("dac_bits must be >= 1");
        }
        let nonneg = [
            self.min_rate_bps_hz,
            self.ap_power_max_w,
            self.ris_power_max_w,
            self.absorption_per_m,
            self.ap_rf_chain_w,
            self.user_static_w,
            self.backhaul_w,
            self.ris_circuit_w,
            self.ris_dc_w,
            self.user_area_m,
            self.ris_noise_w.unwrap_or(0.0),
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("powers, rates, absorption and areas must be finite and >= 0");
        }
        if !(self.beta_max > 0.0) {
            return bad("beta_max must be positive");
        }
        self.solver.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one (possibly dotted) key, e.g. `ap_array.y=2` or
    /// `solver.max_outer=10`. The value is parsed as a TOML literal and falls
    /// back to a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = parse_literal(value);
        let mut parts = key.split('.').peekable();
        let mut cur = &mut root;
        while let Some(part) = parts.next() {
            let table =
                cur.as_table_mut().ok_or_else(|| Error::Config(format!("'{key}': '{part}' is not inside a table")))?;
            if parts.peek().is_none() {
                let slot = table.entry(part.to_string()).or_insert(toml::Value::Boolean(false));
                *slot = coerce(slot, parsed);
                break;
            }
            cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("'{key}': {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (k, v) =
                item.split_once('=').ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

fn parse_literal(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

// Integer literals written where a float is stored (e.g. `kappa=1`) would
// otherwise fail to deserialize.
fn coerce(existing: &toml::Value, new: toml::Value) -> toml::Value {
    match (existing, &new) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
        _ => new,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_parameter_table() {
        let c = SystemConfig::paper();
        assert_eq!(c.subcarriers, 4);
        assert!((c.subcarrier_bw_hz() - 1.25e9).abs() < 1e-3);
        assert!((c.sampling_rate_hz() - 2.5e9).abs() < 1e-3);
        assert!((c.beta_max - 10.0).abs() < 1e-12);
        assert!((c.ris_power_max_w - 0.1).abs() < 1e-15);
        assert!((c.sinr_floor() - 0.071_773_462_536_293_13).abs() < 1e-12);
        assert_eq!(c.ris_array, UpaDims::new(8, 8));
        c.validate().unwrap();
        SystemConfig::desk().validate().unwrap();
    }

    #[test]
    fn near_square_factorization() {
        assert_eq!(UpaDims::near_square(64), UpaDims::new(8, 8));
        assert_eq!(UpaDims::near_square(32), UpaDims::new(8, 4));
        assert_eq!(UpaDims::near_square(16), UpaDims::new(4, 4));
        assert_eq!(UpaDims::near_square(7), UpaDims::new(7, 1));
        assert_eq!(UpaDims::near_square(1), UpaDims::new(1, 1));
    }

    #[test]
    fn toml_round_trip() {
        let c = SystemConfig::desk();
        let back = SystemConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn dotted_overrides() {
        let mut c = SystemConfig::desk();
        c.apply_overrides(&["kappa=0", "ap_array.y=3", "solver.max_outer=7", "dac_bits = 4"]).unwrap();
        assert_eq!(c.kappa, 0.0);
        assert_eq!(c.ap_array.y, 3);
        assert_eq!(c.solver.max_outer, 7);
        assert_eq!(c.dac_bits, 4);
        assert!(c.to_toml().contains("kappa = 0.0"));
        c.set("ris_noise_w", "1e-12").unwrap();
        assert_eq!(c.ris_noise_w, Some(1e-12));
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = SystemConfig::desk();
        assert!(c.set("kappa", "1.5").is_err());
        assert!(c.set("aps", "1").is_err());
        assert!(c.set("no_such_key", "1").is_err());
        assert!(c.apply_overrides(&["kappa"]).is_err());
        // failed overrides leave the config untouched
        assert_eq!(c, SystemConfig::desk());
        let bad = SystemConfig::desk().to_toml().replace("schema_version = 1", "schema_version = 9");
        assert!(SystemConfig::from_toml(&bad).is_err());
    }
}
