//! Line-of-sight THz channels between APs, RISs and users.
//!
//! APs and RISs carry uniform planar arrays, users carry uniform linear
//! arrays. Each AP-RIS and RIS-user link is a single LoS path, so every
//! channel matrix is a scaled outer product of two unit-norm array responses.
//! Path angles are drawn once per physical link and reused on every
//! subcarrier; frequency enters through the phases and the path loss.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::{SystemConfig, UpaDims};
use crate::error::{invalid_arg, Result};
use crate::rng::{self, Stream};
use crate::units::SPEED_OF_LIGHT;
use crate::C64;

/// Subcarrier center frequencies of a wideband system.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub freqs: Vec<f64>,
}

impl FrequencyGrid {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.freqs.len() as f64
    }

    /// DAC sampling rate, twice the subcarrier bandwidth.
    pub fn sampling_rate_hz(&self) -> f64 {
        2.0 * self.spacing_hz()
    }
}

/// `f_b = fc + (BW/B)(b - 1 - (B-1)/2)` for `b = 1..B`.
pub fn subcarrier_frequencies(carrier_hz: f64, bandwidth_hz: f64, count: usize) -> Result<FrequencyGrid> {
    if !(carrier_hz > 0.0) || !(bandwidth_hz > 0.0) || count == 0 {
        return invalid_arg(format!(
            "subcarrier grid needs fc > 0, BW > 0, B >= 1 (got {carrier_hz}, {bandwidth_hz}, {count})"
        ));
    }
    let spacing = bandwidth_hz / count as f64;
    let mid = (count as f64 - 1.0) / 2.0;
    let freqs = (0..count).map(|i| carrier_hz + spacing * (i as f64 - mid)).collect();
    Ok(FrequencyGrid { carrier_hz, bandwidth_hz, freqs })
}

/// Amplitude path gain: free-space spreading times molecular absorption,
/// `c / (4 pi f d) * exp(-xi d / 2)`.
pub fn path_loss(freq_hz: f64, dist_m: f64, absorption_per_m: f64) -> Result<f64> {
    if !(freq_hz > 0.0) || !(dist_m > 0.0) || !(absorption_per_m >= 0.0) {
        return invalid_arg(format!(
            "path loss needs f > 0, d > 0, xi >= 0 (got {freq_hz}, {dist_m}, {absorption_per_m})"
        ));
    }
    Ok(SPEED_OF_LIGHT / (4.0 * PI * freq_hz * dist_m) * (-0.5 * absorption_per_m * dist_m).exp())
}

/// Array gain as a linear power ratio: `4 + 10 log10(sqrt(N))` dBi.
pub fn antenna_gain(elements: usize) -> f64 {
    let dbi = 4.0 + 10.0 * (elements as f64).sqrt().log10();
    10f64.powf(dbi / 10.0)
}

/// Half-wavelength spacing at the carrier.
pub fn element_spacing(carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * carrier_hz)
}

/// UPA response. Element `(ny, nz)` sits at index `ny * Nz + nz`.
pub fn upa_response(azimuth: f64, elevation: f64, dims: UpaDims, spacing_m: f64, freq_hz: f64) -> DVector<C64> {
    let n = dims.count();
    let scale = 1.0 / (n as f64).sqrt();
    let k = 2.0 * PI * spacing_m * freq_hz / SPEED_OF_LIGHT;
    let py = azimuth.sin() * elevation.sin();
    let pz = elevation.cos();
    DVector::from_iterator(
        n,
        (0..dims.y)
            .flat_map(|ny| (0..dims.z).map(move |nz| C64::from_polar(scale, k * (ny as f64 * py + nz as f64 * pz)))),
    )
}

/// ULA response with `N` elements along one axis.
pub fn ula_response(angle: f64, elements: usize, spacing_m: f64, freq_hz: f64) -> DVector<C64> {
    let scale = 1.0 / (elements as f64).sqrt();
    let k = 2.0 * PI * spacing_m * freq_hz / SPEED_OF_LIGHT * angle.sin();
    DVector::from_iterator(elements, (0..elements).map(|n| C64::from_polar(scale, k * n as f64)))
}

/// Node coordinates (m).
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub aps: Vec<[f64; 3]>,
    pub ris: Vec<[f64; 3]>,
    pub users: Vec<[f64; 3]>,
}

pub const USER_HEIGHT_M: f64 = 1.65;

/// APs on the line `y = -4, z = 6` spanning x in [0, 12], RISs from the
/// config, users uniformly in the square `[dU, dU + side] x [0, side]` at
/// 1.65 m height.
pub fn place_nodes(config: &SystemConfig, seed: u64) -> Result<Geometry> {
    let q = config.aps;
    if q < 2 {
        return invalid_arg("AP placement requires at least two APs");
    }
    let aps = (0..q).map(|i| [12.0 * i as f64 / (q - 1) as f64, -4.0, 6.0]).collect();
    let mut rng = rng::stream(seed, Stream::UserPositions);
    let side = config.user_area_m;
    let users = (0..config.users)
        .map(|_| {
            let dx = rng.random::<f64>() * side;
            let dy = rng.random::<f64>() * side;
            [config.user_x_offset_m + dx, dy, USER_HEIGHT_M]
        })
        .collect();
    Ok(Geometry { aps, ris: config.ris_positions.clone(), users })
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Path angles of one AP-RIS link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApRisAngles {
    pub arrival_azimuth: f64,
    pub arrival_elevation: f64,
    pub departure_azimuth: f64,
    pub departure_elevation: f64,
}

/// Path angles of one RIS-user link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisUserAngles {
    pub departure_azimuth: f64,
    pub departure_elevation: f64,
    pub arrival: f64,
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub aps: usize,
    pub ap_antennas: usize,
    pub users: usize,
    pub user_antennas: usize,
    pub ris: usize,
    pub ris_elements: usize,
    pub subcarriers: usize,
}

impl Dims {
    pub fn from_config(c: &SystemConfig) -> Self {
        Self {
            aps: c.aps,
            ap_antennas: c.ap_antennas(),
            users: c.users,
            user_antennas: c.user_antennas,
            ris: c.ris_count(),
            ris_elements: c.ris_elements(),
            subcarriers: c.subcarriers,
        }
    }

    /// Length of the stacked RIS coefficient vector.
    pub fn phi_len(&self) -> usize {
        self.ris * self.ris_elements
    }

    /// Number of precoders `f_{q,k,b}`.
    pub fn precoder_count(&self) -> usize {
        self.aps * self.users * self.subcarriers
    }

    pub fn precoder_index(&self, q: usize, k: usize, b: usize) -> usize {
        (q * self.users + k) * self.subcarriers + b
    }

    pub fn user_sub_index(&self, k: usize, b: usize) -> usize {
        k * self.subcarriers + b
    }
}

/// Per-subcarrier channels. `G_{q,l,b}` is `M x Nt` (AP to RIS) and
/// `W_{l,k,b}` is `M x Nu` (RIS to user).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub dims: Dims,
    pub grid: FrequencyGrid,
    g: Vec<DMatrix<C64>>,
    w: Vec<DMatrix<C64>>,
    /// AP-RIS distances indexed `[q][l]`.
    pub dist_ap_ris: Vec<Vec<f64>>,
    /// RIS-user distances indexed `[l][k]`.
    pub dist_ris_user: Vec<Vec<f64>>,
    pub ap_ris_angles: Vec<Vec<ApRisAngles>>,
    pub ris_user_angles: Vec<Vec<RisUserAngles>>,
}

impl ChannelSet {
    pub fn g(&self, q: usize, l: usize, b: usize) -> &DMatrix<C64> {
        let d = &self.dims;
        &self.g[(q * d.ris + l) * d.subcarriers + b]
    }

    pub fn w(&self, l: usize, k: usize, b: usize) -> &DMatrix<C64> {
        let d = &self.dims;
        &self.w[(l * d.users + k) * d.subcarriers + b]
    }

    /// Builds a channel set from explicit matrices (`g` indexed
    /// `[(q*L + l)*B + b]`, `w` indexed `[(l*K + k)*B + b]`). Used by tests and
    /// the FFI layer.
    pub fn from_matrices(dims: Dims, grid: FrequencyGrid, g: Vec<DMatrix<C64>>, w: Vec<DMatrix<C64>>) -> Result<Self> {
        if g.len() != dims.aps * dims.ris * dims.subcarriers || w.len() != dims.ris * dims.users * dims.subcarriers {
            return invalid_arg("channel matrix count does not match dimensions");
        }
        if g.iter().any(|m| m.shape() != (dims.ris_elements, dims.ap_antennas))
            || w.iter().any(|m| m.shape() != (dims.ris_elements, dims.user_antennas))
        {
            return invalid_arg("channel matrix shape does not match dimensions");
        }
        Ok(Self {
            dims,
            grid,
            g,
            w,
            dist_ap_ris: vec![vec![f64::NAN; dims.ris]; dims.aps],
            dist_ris_user: vec![vec![f64::NAN; dims.users]; dims.ris],
            ap_ris_angles: Vec::new(),
            ris_user_angles: Vec::new(),
        })
    }
}

fn draw_angle<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-FRAC_PI_2..=FRAC_PI_2)
}

/// Draws one LoS channel realization. Identical `(config, geometry, seed)`
/// gives a bitwise identical result.
pub fn generate_channels(config: &SystemConfig, geometry: &Geometry, seed: u64) -> Result<ChannelSet> {
    config.validate()?;
    let dims = Dims::from_config(config);
    if geometry.aps.len() != dims.aps || geometry.ris.len() != dims.ris || geometry.users.len() != dims.users {
        return invalid_arg("geometry node counts do not match the config");
    }
    let grid = subcarrier_frequencies(config.carrier_hz, config.bandwidth_hz, config.subcarriers)?;
    let spacing = element_spacing(config.carrier_hz);
    let gain_t = antenna_gain(dims.ap_antennas);
    let gain_r = antenna_gain(dims.user_antennas);
    let m = dims.ris_elements as f64;

    let mut rng = rng::stream(seed, Stream::LinkAngles);
    let ap_ris_angles: Vec<Vec<ApRisAngles>> = (0..dims.aps)
        .map(|_| {
            (0..dims.ris)
                .map(|_| ApRisAngles {
                    arrival_azimuth: draw_angle(&mut rng),
                    arrival_elevation: draw_angle(&mut rng),
                    departure_azimuth: draw_angle(&mut rng),
                    departure_elevation: draw_angle(&mut rng),
                })
                .collect()
        })
        .collect();
    let ris_user_angles: Vec<Vec<RisUserAngles>> = (0..dims.ris)
        .map(|_| {
            (0..dims.users)
                .map(|_| RisUserAngles {
                    departure_azimuth: draw_angle(&mut rng),
                    departure_elevation: draw_angle(&mut rng),
                    arrival: draw_angle(&mut rng),
                })
                .collect()
        })
        .collect();

    let dist_ap_ris: Vec<Vec<f64>> =
        geometry.aps.iter().map(|a| geometry.ris.iter().map(|r| distance(a, r)).collect()).collect();
    let dist_ris_user: Vec<Vec<f64>> =
        geometry.ris.iter().map(|r| geometry.users.iter().map(|u| distance(r, u)).collect()).collect();

    let mut g = Vec::with_capacity(dims.aps * dims.ris * dims.subcarriers);
    for q in 0..dims.aps {
        for l in 0..dims.ris {
            let ang = ap_ris_angles[q][l];
            for &f in &grid.freqs {
                let amp = (gain_t * dims.ap_antennas as f64 * m).sqrt()
                    * path_loss(f, dist_ap_ris[q][l], config.absorption_per_m)?;
                let a_r = upa_response(ang.arrival_azimuth, ang.arrival_elevation, config.ris_array, spacing, f);
                let a_t = upa_response(ang.departure_azimuth, ang.departure_elevation, config.ap_array, spacing, f);
                g.push((a_r * a_t.adjoint()).scale(amp));
            }
        }
    }
    let mut w = Vec::with_capacity(dims.ris * dims.users * dims.subcarriers);
    for l in 0..dims.ris {
        for k in 0..dims.users {
            let ang = ris_user_angles[l][k];
            for &f in &grid.freqs {
                let amp = (gain_r * m * dims.user_antennas as f64).sqrt()
                    * path_loss(f, dist_ris_user[l][k], config.absorption_per_m)?;
                let a_t = upa_response(ang.departure_azimuth, ang.departure_elevation, config.ris_array, spacing, f);
                let a_u = ula_response(ang.arrival, dims.user_antennas, spacing, f);
                w.push((a_t * a_u.adjoint()).scale(amp));
            }
        }
    }

    Ok(ChannelSet { dims, grid, g, w, dist_ap_ris, dist_ris_user, ap_ris_angles, ris_user_angles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn subcarrier_grid_examples() {
        let g = subcarrier_frequencies(0.14e12, 5e9, 4).unwrap();
        let want = [138.125e9, 139.375e9, 140.625e9, 141.875e9];
        for (f, w) in g.freqs.iter().zip(want) {
            assert!(rel(*f, w) < 1e-12);
        }
        assert_eq!(subcarrier_frequencies(0.14e12, 5e9, 1).unwrap().freqs, vec![140e9]);
        let two = subcarrier_frequencies(0.14e12, 5e9, 2).unwrap();
        assert!(rel(two.freqs[0], 138.75e9) < 1e-12 && rel(two.freqs[1], 141.25e9) < 1e-12);
        assert!((two.sampling_rate_hz() - 5e9).abs() < 1e-3);
    }

    #[test]
    fn subcarrier_grid_errors() {
        assert!(subcarrier_frequencies(0.0, 5e9, 4).is_err());
        assert!(subcarrier_frequencies(1e9, -1.0, 4).is_err());
        assert!(subcarrier_frequencies(1e9, 1e6, 0).is_err());
    }

    #[test]
    fn path_loss_errors_and_free_space_limit() {
        assert!(path_loss(1e11, 0.0, 0.0).is_err());
        assert!(path_loss(1e11, 1.0, -1.0).is_err());
        let free = SPEED_OF_LIGHT / (4.0 * PI * 2e11 * 7.0);
        assert!(rel(path_loss(2e11, 7.0, 0.0).unwrap(), free) < 1e-15);
    }

    #[test]
    fn upa_single_element_and_broadside() {
        let one = upa_response(0.4, -0.3, UpaDims::new(1, 1), 1e-3, 1e11);
        assert_eq!(one.len(), 1);
        assert!((one[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        let v = upa_response(0.0, FRAC_PI_2, UpaDims::new(2, 1), element_spacing(0.14e12), 0.14e12);
        let s = 1.0 / 2f64.sqrt();
        for x in v.iter() {
            assert!((x - C64::new(s, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn upa_ordering_is_z_fastest() {
        // pure elevation phase (gamma = 0) varies only along z
        let dims = UpaDims::new(2, 3);
        let v = upa_response(0.0, 0.7, dims, 1e-3, 1e11);
        assert!((v[0] - v[3]).norm() < 1e-15);
        assert!((v[1] - v[4]).norm() < 1e-15);
        assert!((v[0] - v[1]).norm() > 1e-3);
    }

    #[test]
    fn ula_examples() {
        let v = ula_response(0.0, 4, 1e-3, 1e11);
        for x in v.iter() {
            assert!((x - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
        let f = 1.4e11;
        let v = ula_response(FRAC_PI_2, 2, SPEED_OF_LIGHT / (2.0 * f), f);
        let s = 1.0 / 2f64.sqrt();
        assert!((v[0] - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((v[1] - C64::new(-s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn antenna_gain_examples() {
        assert!(rel(antenna_gain(1), 10f64.powf(0.4)) < 1e-12);
        assert!(rel(antenna_gain(100), 10f64.powf(1.4)) < 1e-12);
        assert!((antenna_gain(16) - 10.0475).abs() < 1e-4);
    }

    #[test]
    fn placement() {
        let mut c = SystemConfig::paper();
        let g = place_nodes(&c, 3).unwrap();
        assert_eq!(g.aps[0], [0.0, -4.0, 6.0]);
        assert_eq!(g.aps[2], [12.0, -4.0, 6.0]);
        assert_eq!(g.ris, vec![[5.0, 3.0, 6.0], [8.0, 3.0, 6.0]]);
        for u in &g.users {
            assert!(u[0] >= 5.0 && u[0] <= 8.0 && u[1] >= 0.0 && u[1] <= 3.0);
            assert_eq!(u[2], USER_HEIGHT_M);
        }
        assert_eq!(g, place_nodes(&c, 3).unwrap());
        assert_ne!(g.users, place_nodes(&c, 4).unwrap().users);
        c.aps = 1;
        assert!(place_nodes(&c, 3).is_err());
        c.aps = 3;
        c.user_area_m = 0.0;
        assert_eq!(place_nodes(&c, 9).unwrap().users[0], [5.0, 0.0, 1.65]);
    }

    #[test]
    fn channels_are_rank_one_with_expected_norm() {
        let c = SystemConfig::desk();
        let geo = place_nodes(&c, 11).unwrap();
        let ch = generate_channels(&c, &geo, 11).unwrap();
        let d = ch.dims;
        let gt = antenna_gain(d.ap_antennas);
        for q in 0..d.aps {
            for l in 0..d.ris {
                for b in 0..d.subcarriers {
                    let g = ch.g(q, l, b);
                    let want = (gt * d.ap_antennas as f64 * d.ris_elements as f64).sqrt()
                        * path_loss(ch.grid.freqs[b], ch.dist_ap_ris[q][l], c.absorption_per_m).unwrap();
                    assert!(rel(g.norm(), want) < 1e-9);
                    let sv = g.clone().singular_values();
                    assert!(sv[1] < 1e-12 * sv[0]);
                }
            }
        }
        for a in ch.ap_ris_angles.iter().flatten() {
            for x in [a.arrival_azimuth, a.arrival_elevation, a.departure_azimuth, a.departure_elevation] {
                assert!((-FRAC_PI_2..=FRAC_PI_2).contains(&x));
            }
        }
        assert_eq!(ch, generate_channels(&c, &geo, 11).unwrap());
    }
}
