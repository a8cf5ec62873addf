//! Composite channels, SINR, spectral/energy efficiency, the power model and
//! constraint residuals.
//!
//! The SINR is available through three independent routes:
//!
//! - [`sinr`] builds the stacked matrices (`J`, `chi`, `Theta`, `W`) and
//!   evaluates the ratio literally;
//! - [`sinr_psi_form`] uses per-AP effective rows `omega J_q^H` with the
//!   quantization term written as a sum of `alpha ||omega J_q^H diag(f)||^2`
//!   (this is the route the optimizer and [`evaluate`] use);
//! - [`sinr_phi_form`] writes everything as quadratic forms in the stacked RIS
//!   vector `phi` via `U_{k,b} = [diag(omega W^H) G_{q,b}]_q`.

use nalgebra::{DMatrix, DVector};

use crate::channel::{ChannelSet, Dims};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::quantization::{quantization_noise_cov, DacModel};
use crate::C64;

/// Receiver and RIS thermal noise powers (W).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Indexed by [`Dims::user_sub_index`].
    pub sigma2_user: Vec<f64>,
    /// Per-element noise power of each RIS.
    pub sigma2_ris: Vec<f64>,
}

impl NoiseModel {
    pub fn from_config(c: &SystemConfig) -> Self {
        Self {
            sigma2_user: vec![c.user_noise_w(); c.users * c.subcarriers],
            sigma2_ris: vec![c.ris_noise_power_w(); c.ris_count()],
        }
    }
}

/// Optimization variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVariables {
    /// `f_{q,k,b}` indexed by [`Dims::precoder_index`], each of length `Nt`.
    pub f: Vec<DVector<C64>>,
    /// Stacked RIS coefficients, length `L*M`, RIS-major.
    pub phi: DVector<C64>,
    /// Entries of the receive row vector `omega_{k,b}` (length `Nu`),
    /// indexed by [`Dims::user_sub_index`].
    pub omega: Vec<DVector<C64>>,
    pub tau: f64,
}

impl DesignVariables {
    pub fn zeros(d: &Dims) -> Self {
        let mut e0 = DVector::zeros(d.user_antennas);
        e0[0] = C64::new(1.0, 0.0);
        Self {
            f: vec![DVector::zeros(d.ap_antennas); d.precoder_count()],
            phi: DVector::zeros(d.phi_len()),
            omega: vec![e0; d.users * d.subcarriers],
            tau: 0.0,
        }
    }
}

/// Power model constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerModel {
    pub eta_ap: f64,
    pub eta_ris: f64,
    pub static_w: f64,
    pub p_tot_w: f64,
    /// Whether reflected RIS power counts towards `P_sys` (false for passive
    /// surfaces).
    pub include_ris_power: bool,
}

/// Constraint levels of the optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub ap_power_max_w: Vec<f64>,
    pub ris_power_max_w: Vec<f64>,
    pub ris_power_constrained: bool,
    pub beta_max: f64,
    pub min_rate_bps_hz: f64,
}

impl Limits {
    pub fn sinr_floor(&self) -> f64 {
        self.min_rate_bps_hz.exp2() - 1.0
    }
}

/// Everything needed to evaluate a design on one channel realization.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub channels: ChannelSet,
    pub dac: DacModel,
    pub noise: NoiseModel,
    pub power: PowerModel,
    pub limits: Limits,
    pub kappa: f64,
}

impl Scenario {
    pub fn from_config(c: &SystemConfig, channels: ChannelSet) -> Result<Self> {
        c.validate()?;
        Ok(Self {
            dac: DacModel::uniform(c.aps, c.dac_bits)?,
            noise: NoiseModel::from_config(c),
            power: PowerModel {
                eta_ap: c.eta_ap,
                eta_ris: c.eta_ris,
                static_w: power_static(c)?,
                p_tot_w: p_tot(c)?,
                include_ris_power: true,
            },
            limits: Limits {
                ap_power_max_w: vec![c.ap_power_max_w; c.aps],
                ris_power_max_w: vec![c.ris_power_max_w; c.ris_count()],
                ris_power_constrained: true,
                beta_max: c.beta_max,
                min_rate_bps_hz: c.min_rate_bps_hz,
            },
            kappa: c.kappa,
            channels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.channels.dims
    }
}

/// `J^H_{q,k,b} = sum_l W_{l,k,b}^H Theta_l^H G_{q,l,b}` (`Nu x Nt`).
pub fn composite_channel(ch: &ChannelSet, phi: &DVector<C64>, q: usize, k: usize, b: usize) -> DMatrix<C64> {
    let d = ch.dims;
    let mut out = DMatrix::zeros(d.user_antennas, d.ap_antennas);
    for l in 0..d.ris {
        let theta_h = DMatrix::from_diagonal(&phi.rows(l * d.ris_elements, d.ris_elements).map(|x| x.conj()));
        out += ch.w(l, k, b).adjoint() * theta_h * ch.g(q, l, b);
    }
    out
}

/// `(omega W_{l,k,b}^H)^T`, length `M`.
pub fn omega_w(ch: &ChannelSet, omega: &DVector<C64>, l: usize, k: usize, b: usize) -> DVector<C64> {
    ch.w(l, k, b).map(|x| x.conj()) * omega
}

/// `(omega J_{q,k,b}^H)^T` for every AP, computed without forming `J`.
pub fn effective_rows(
    ch: &ChannelSet,
    phi: &DVector<C64>,
    omega: &DVector<C64>,
    k: usize,
    b: usize,
) -> Vec<DVector<C64>> {
    let d = ch.dims;
    let weighted: Vec<DVector<C64>> = (0..d.ris)
        .map(|l| {
            let ow = omega_w(ch, omega, l, k, b);
            let p = phi.rows(l * d.ris_elements, d.ris_elements);
            ow.zip_map(&p, |a, x| a * x.conj())
        })
        .collect();
    (0..d.aps)
        .map(|q| {
            let mut row = DVector::zeros(d.ap_antennas);
            for (l, wv) in weighted.iter().enumerate() {
                row += ch.g(q, l, b).transpose() * wv;
            }
            row
        })
        .collect()
}

fn dot_row(row: &DVector<C64>, f: &DVector<C64>) -> C64 {
    row.iter().zip(f.iter()).map(|(a, x)| a * x).sum()
}

/// Expected RIS thermal-noise power after the receive filter,
/// `omega W^H Theta^H (sigma_v (x) I) Theta W omega^H`.
fn ris_noise_term(s: &Scenario, vars: &DesignVariables, k: usize, b: usize) -> f64 {
    let d = s.dims();
    let omega = &vars.omega[d.user_sub_index(k, b)];
    (0..d.ris)
        .map(|l| {
            let ow = omega_w(&s.channels, omega, l, k, b);
            let p = vars.phi.rows(l * d.ris_elements, d.ris_elements);
            s.noise.sigma2_ris[l] * ow.iter().zip(p.iter()).map(|(a, x)| a.norm_sqr() * x.norm_sqr()).sum::<f64>()
        })
        .sum()
}

/// SINR components: numerator and the four denominator terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrParts {
    pub signal: f64,
    pub interference: f64,
    pub quantization: f64,
    pub ris_noise: f64,
    pub receiver_noise: f64,
}

impl SinrParts {
    pub fn denominator(&self) -> f64 {
        self.interference + self.quantization + self.ris_noise + self.receiver_noise
    }

    pub fn sinr(&self) -> f64 {
        self.signal / self.denominator()
    }
}

/// SINR of user `k` on subcarrier `b`, from literally stacked matrices.
pub fn sinr(s: &Scenario, vars: &DesignVariables, k: usize, b: usize) -> f64 {
    sinr_parts_stacked(s, vars, k, b).sinr()
}

pub fn sinr_parts_stacked(s: &Scenario, vars: &DesignVariables, k: usize, b: usize) -> SinrParts {
    let d = s.dims();
    let (nt, lm) = (d.ap_antennas, d.phi_len());
    let qn = d.aps * nt;
    let omega_col = &vars.omega[d.user_sub_index(k, b)];
    let omega = omega_col.transpose(); // 1 x Nu row

    // J_{k,b} stacked (Q Nt x Nu), chi, f_{k',b} stacked
    let mut j = DMatrix::<C64>::zeros(qn, d.user_antennas);
    for q in 0..d.aps {
        j.view_mut((q * nt, 0), (nt, d.user_antennas))
            .copy_from(&composite_channel(&s.channels, &vars.phi, q, k, b).adjoint());
    }
    let chi = DMatrix::<C64>::from_diagonal(&DVector::from_iterator(
        qn,
        (0..qn).map(|i| C64::new(s.dac.lambda[i / nt], 0.0)),
    ));
    let stacked_f = |kk: usize| {
        let mut v = DVector::<C64>::zeros(qn);
        for q in 0..d.aps {
            v.rows_mut(q * nt, nt).copy_from(&vars.f[d.precoder_index(q, kk, b)]);
        }
        v
    };
    let ojc = &omega * j.adjoint() * &chi;
    let amp = |kk: usize| (&ojc * stacked_f(kk))[(0, 0)];
    let signal = amp(k).norm_sqr();
    let interference = (0..d.users).filter(|&kk| kk != k).map(|kk| amp(kk).norm_sqr()).sum();

    let mut quantization = 0.0;
    for q in 0..d.aps {
        let fs: Vec<&DVector<C64>> = (0..d.users).map(|kk| &vars.f[d.precoder_index(q, kk, b)]).collect();
        let cov = quantization_noise_cov(fs, s.dac.alpha[q]).map(|x| C64::new(x, 0.0));
        let jq = j.view((q * nt, 0), (nt, d.user_antennas));
        let val = &omega * jq.adjoint() * DMatrix::from_diagonal(&cov) * jq * omega.adjoint();
        quantization += val[(0, 0)].re;
    }

    let mut w = DMatrix::<C64>::zeros(lm, d.user_antennas);
    for l in 0..d.ris {
        w.view_mut((l * d.ris_elements, 0), (d.ris_elements, d.user_antennas)).copy_from(s.channels.w(l, k, b));
    }
    let theta = DMatrix::from_diagonal(&vars.phi);
    let sv = DMatrix::from_diagonal(&DVector::from_iterator(
        lm,
        (0..lm).map(|i| C64::new(s.noise.sigma2_ris[i / d.ris_elements], 0.0)),
    ));
    let ris_noise = (&omega * w.adjoint() * theta.adjoint() * sv * &theta * &w * omega.adjoint())[(0, 0)].re;
    let receiver_noise = omega_col.norm_squared() * s.noise.sigma2_user[d.user_sub_index(k, b)];
    SinrParts { signal, interference, quantization, ris_noise, receiver_noise }
}

/// SINR via effective rows and the sum-of-diagonal quantization term.
pub fn sinr_psi_form(s: &Scenario, vars: &DesignVariables, k: usize, b: usize) -> f64 {
    sinr_parts(s, vars, k, b).sinr()
}

pub fn sinr_parts(s: &Scenario, vars: &DesignVariables, k: usize, b: usize) -> SinrParts {
    let d = s.dims();
    let kb = d.user_sub_index(k, b);
    let rows = effective_rows(&s.channels, &vars.phi, &vars.omega[kb], k, b);
    let amp = |kk: usize| -> C64 {
        (0..d.aps).map(|q| dot_row(&rows[q], &vars.f[d.precoder_index(q, kk, b)]) * s.dac.lambda[q]).sum()
    };
    let signal = amp(k).norm_sqr();
    let interference = (0..d.users).filter(|&kk| kk != k).map(|kk| amp(kk).norm_sqr()).sum();
    let mut quantization = 0.0;
    for q in 0..d.aps {
        for kk in 0..d.users {
            let f = &vars.f[d.precoder_index(q, kk, b)];
            let t: f64 = rows[q].iter().zip(f.iter()).map(|(g, x)| (g * x).norm_sqr()).sum();
            quantization += s.dac.alpha[q] * t;
        }
    }
    SinrParts {
        signal,
        interference,
        quantization,
        ris_noise: ris_noise_term(s, vars, k, b),
        receiver_noise: vars.omega[kb].norm_squared() * s.noise.sigma2_user[kb],
    }
}

/// `U_{k,b} = [diag(omega W_{k,b}^H) G_{q,b}]_q`, an `LM x Q Nt` matrix, and
/// the diagonal `diag(omega W_{k,b}^H)` as a vector.
pub fn u_matrix(ch: &ChannelSet, omega: &DVector<C64>, k: usize, b: usize) -> (DMatrix<C64>, DVector<C64>) {
    let d = ch.dims;
    let (m, nt) = (d.ris_elements, d.ap_antennas);
    let mut diag = DVector::zeros(d.phi_len());
    for l in 0..d.ris {
        diag.rows_mut(l * m, m).copy_from(&omega_w(ch, omega, l, k, b));
    }
    let mut u = DMatrix::zeros(d.phi_len(), d.aps * nt);
    for q in 0..d.aps {
        for l in 0..d.ris {
            let block = DMatrix::from_diagonal(&diag.rows(l * m, m).into_owned()) * ch.g(q, l, b);
            u.view_mut((l * m, q * nt), (m, nt)).copy_from(&block);
        }
    }
    (u, diag)
}

/// SINR as a ratio of quadratic forms in `phi`.
pub fn sinr_phi_form(s: &Scenario, vars: &DesignVariables, k: usize, b: usize) -> f64 {
    let d = s.dims();
    let nt = d.ap_antennas;
    let qn = d.aps * nt;
    let kb = d.user_sub_index(k, b);
    let (u, diag) = u_matrix(&s.channels, &vars.omega[kb], k, b);
    let phi_h = vars.phi.adjoint();
    let chi_f = |kk: usize| {
        DVector::from_iterator(
            qn,
            (0..qn).map(|i| vars.f[d.precoder_index(i / nt, kk, b)][i % nt] * s.dac.lambda[i / nt]),
        )
    };
    let amp = |kk: usize| (&phi_h * &u * chi_f(kk))[(0, 0)];
    let signal = amp(k).norm_sqr();
    let interference: f64 = (0..d.users).filter(|&kk| kk != k).map(|kk| amp(kk).norm_sqr()).sum();
    let sigma_n = DVector::from_iterator(
        qn,
        (0..qn).map(|i| {
            let q = i / nt;
            let p: f64 = (0..d.users).map(|kk| vars.f[d.precoder_index(q, kk, b)][i % nt].norm_sqr()).sum();
            C64::new(s.dac.alpha[q] * p, 0.0)
        }),
    );
    let quant = (&phi_h * &u * DMatrix::from_diagonal(&sigma_n) * u.adjoint() * &vars.phi)[(0, 0)].re;
    let sv = DVector::from_iterator(
        d.phi_len(),
        (0..d.phi_len()).map(|i| C64::new(s.noise.sigma2_ris[i / d.ris_elements], 0.0)),
    );
    let dm = DMatrix::from_diagonal(&diag);
    let ris = (&phi_h * &dm * DMatrix::from_diagonal(&sv) * dm.adjoint() * &vars.phi)[(0, 0)].re;
    let noise = vars.omega[kb].norm_squared() * s.noise.sigma2_user[kb];
    signal / (interference + quant + ris + noise)
}

/// `rho_SE = sum_{k,b} log2(1 + SINR_{k,b})`.
pub fn spectral_efficiency(sinrs: &[f64]) -> f64 {
    sinrs.iter().map(|x| (1.0 + x).log2()).sum()
}

/// `rho_EE = rho_SE / P_sys`.
pub fn energy_efficiency(se: f64, p_sys: f64) -> Result<f64> {
    if !(p_sys > 0.0) {
        return Err(Error::InvalidState(format!("system power must be positive, got {p_sys}")));
    }
    Ok(se / p_sys)
}

/// `kappa rho_EE + (1 - kappa) rho_SE / P_tot`.
pub fn objective(kappa: f64, se: f64, ee: f64, p_tot: f64) -> f64 {
    kappa * ee + (1.0 - kappa) * se / p_tot
}

/// Consumed transmit power of AP `q`: `eta_A^-1 sum_{k,b} ||f_{q,k,b}||^2`.
pub fn power_ap(f: &[DVector<C64>], d: &Dims, q: usize, eta_ap: f64) -> f64 {
    radiated_ap(f, d, q) / eta_ap
}

/// `sum_{k,b} ||f_{q,k,b}||^2` (the quantity bounded by the AP budget).
pub fn radiated_ap(f: &[DVector<C64>], d: &Dims, q: usize) -> f64 {
    let mut p = 0.0;
    for k in 0..d.users {
        for b in 0..d.subcarriers {
            p += f[d.precoder_index(q, k, b)].norm_squared();
        }
    }
    p
}

/// Power reflected by RIS `l` (signal, amplified quantization noise and
/// amplified thermal noise), before dividing by `eta_R`.
pub fn reflected_ris(
    ch: &ChannelSet,
    f: &[DVector<C64>],
    phi: &DVector<C64>,
    dac: &DacModel,
    sigma2_ris: f64,
    l: usize,
) -> f64 {
    let d = ch.dims;
    let m = d.ris_elements;
    let p = phi.rows(l * m, m);
    let mut total = 0.0;
    for b in 0..d.subcarriers {
        for q in 0..d.aps {
            let g = ch.g(q, l, b);
            let mut cov = DVector::<f64>::zeros(d.ap_antennas);
            for k in 0..d.users {
                let fq = &f[d.precoder_index(q, k, b)];
                let gf = g * fq;
                total += dac.lambda[q].powi(2)
                    * gf.iter().zip(p.iter()).map(|(a, x)| (a * x.conj()).norm_sqr()).sum::<f64>();
                for (c, x) in cov.iter_mut().zip(fq.iter()) {
                    *c += x.norm_sqr();
                }
            }
            // Tr(Theta^H G Sigma G^H Theta)
            for mm in 0..m {
                let row: f64 = (0..d.ap_antennas).map(|n| g[(mm, n)].norm_sqr() * cov[n]).sum();
                total += p[mm].norm_sqr() * dac.alpha[q] * row;
            }
        }
    }
    total + p.norm_squared() * sigma2_ris
}

/// `P_RIS,l` including the amplifier efficiency.
pub fn power_ris(
    ch: &ChannelSet,
    f: &[DVector<C64>],
    phi: &DVector<C64>,
    dac: &DacModel,
    noise: &NoiseModel,
    l: usize,
    eta_ris: f64,
) -> f64 {
    reflected_ris(ch, f, phi, dac, noise.sigma2_ris[l], l) / eta_ris
}

/// Power of one DAC: `1.5e-5 2^b + 9e-12 b Fs` (W).
pub fn dac_power(sampling_rate_hz: f64, bits: u32) -> f64 {
    1.5e-5 * 2f64.powi(bits as i32) + 9e-12 * bits as f64 * sampling_rate_hz
}

/// Static power of the whole system (W).
pub fn power_static(c: &SystemConfig) -> Result<f64> {
    c.validate()?;
    let q = c.aps as f64;
    let nt = c.ap_antennas() as f64;
    let rf = q * nt * c.ap_rf_chain_w;
    let dac = c.subcarriers as f64 * q * 2.0 * nt * dac_power(c.sampling_rate_hz(), c.dac_bits);
    let users = c.users as f64 * c.user_static_w;
    let backhaul = q * c.backhaul_w;
    let ris = (c.ris_count() * c.ris_elements()) as f64 * (c.ris_circuit_w + c.ris_dc_w);
    Ok(rf + dac + users + backhaul + ris)
}

/// Fixed power budget used to normalize the SE term (W).
pub fn p_tot(c: &SystemConfig) -> Result<f64> {
    Ok(c.aps as f64 * c.ap_power_max_w / c.eta_ap
        + c.ris_count() as f64 * c.ris_power_max_w / c.eta_ris
        + power_static(c)?)
}

/// Power consumption split by component.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerBreakdown {
    pub p_ap: Vec<f64>,
    pub p_ris: Vec<f64>,
    pub p_static: f64,
    pub p_sys: f64,
    pub p_tot: f64,
}

pub fn power_breakdown(s: &Scenario, vars: &DesignVariables) -> PowerBreakdown {
    let d = s.dims();
    let p_ap: Vec<f64> = (0..d.aps).map(|q| power_ap(&vars.f, &d, q, s.power.eta_ap)).collect();
    let p_ris: Vec<f64> = if s.power.include_ris_power {
        (0..d.ris).map(|l| power_ris(&s.channels, &vars.f, &vars.phi, &s.dac, &s.noise, l, s.power.eta_ris)).collect()
    } else {
        vec![0.0; d.ris]
    };
    let p_sys = p_ap.iter().sum::<f64>() + p_ris.iter().sum::<f64>() + s.power.static_w;
    PowerBreakdown { p_ap, p_ris, p_static: s.power.static_w, p_sys, p_tot: s.power.p_tot_w }
}

/// Performance of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Indexed by [`Dims::user_sub_index`].
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub se: f64,
    pub ee: f64,
    pub objective: f64,
    pub power: PowerBreakdown,
}

pub fn evaluate(s: &Scenario, vars: &DesignVariables) -> Metrics {
    let d = s.dims();
    let mut sinr = Vec::with_capacity(d.users * d.subcarriers);
    for k in 0..d.users {
        for b in 0..d.subcarriers {
            sinr.push(sinr_psi_form(s, vars, k, b));
        }
    }
    let rate: Vec<f64> = sinr.iter().map(|x| (1.0 + x).log2()).collect();
    let se = rate.iter().sum();
    let power = power_breakdown(s, vars);
    let ee = energy_efficiency(se, power.p_sys).expect("static power keeps P_sys positive");
    let objective = objective(s.kappa, se, ee, power.p_tot);
    Metrics { sinr, rate, se, ee, objective, power }
}

/// Nonnegative constraint violations (absolute units).
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// Radiated AP power over budget (W).
    pub ap: Vec<f64>,
    /// `P_RIS,l` over budget (W); empty when the constraint is inactive.
    pub ris: Vec<f64>,
    /// `|phi_i|` over `beta_max`.
    pub modulus: Vec<f64>,
    /// Minimum rate minus achieved rate (bit/s/Hz); empty when inactive.
    pub rate: Vec<f64>,
    limits: Limits,
}

impl Residuals {
    pub fn max_ap_rel(&self) -> f64 {
        rel_max(&self.ap, &self.limits.ap_power_max_w)
    }

    pub fn max_ris_rel(&self) -> f64 {
        rel_max(&self.ris, &self.limits.ris_power_max_w)
    }

    pub fn max_modulus_rel(&self) -> f64 {
        self.modulus.iter().fold(0.0, |m, v| m.max(v / self.limits.beta_max))
    }

    pub fn max_rate_rel(&self) -> f64 {
        let scale = self.limits.min_rate_bps_hz.max(f64::MIN_POSITIVE);
        self.rate.iter().fold(0.0, |m, v| m.max(v / scale))
    }

    /// Largest relative violation over all constraints.
    pub fn max_rel(&self) -> f64 {
        self.max_power_rel().max(self.max_rate_rel())
    }

    /// Largest relative violation ignoring the minimum-rate constraint.
    pub fn max_power_rel(&self) -> f64 {
        self.max_ap_rel().max(self.max_ris_rel()).max(self.max_modulus_rel())
    }
}

fn rel_max(v: &[f64], caps: &[f64]) -> f64 {
    v.iter().zip(caps).fold(0.0, |m, (x, c)| m.max(x / c.max(f64::MIN_POSITIVE)))
}

pub fn feasibility_residuals(s: &Scenario, vars: &DesignVariables) -> Residuals {
    let d = s.dims();
    let ap = (0..d.aps).map(|q| (radiated_ap(&vars.f, &d, q) - s.limits.ap_power_max_w[q]).max(0.0)).collect();
    let ris = if s.limits.ris_power_constrained {
        (0..d.ris)
            .map(|l| {
                let p = power_ris(&s.channels, &vars.f, &vars.phi, &s.dac, &s.noise, l, s.power.eta_ris);
                (p - s.limits.ris_power_max_w[l]).max(0.0)
            })
            .collect()
    } else {
        Vec::new()
    };
    let modulus = vars.phi.iter().map(|x| (x.norm() - s.limits.beta_max).max(0.0)).collect();
    let rate = if s.limits.min_rate_bps_hz > 0.0 {
        let mut r = Vec::with_capacity(d.users * d.subcarriers);
        for k in 0..d.users {
            for b in 0..d.subcarriers {
                let achieved = (1.0 + sinr_psi_form(s, vars, k, b)).log2();
                r.push((s.limits.min_rate_bps_hz - achieved).max(0.0));
            }
        }
        r
    } else {
        Vec::new()
    };
    Residuals { ap, ris, modulus, rate, limits: s.limits.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{subcarrier_frequencies, Dims};
    use crate::units::dbm_to_w;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn scalar_scenario(g: C64, w: C64, alpha: f64, sigma_v: f64, sigma: f64) -> Scenario {
        let dims = Dims { aps: 1, ap_antennas: 1, users: 1, user_antennas: 1, ris: 1, ris_elements: 1, subcarriers: 1 };
        let grid = subcarrier_frequencies(1e11, 1e9, 1).unwrap();
        let ch = ChannelSet::from_matrices(
            dims,
            grid,
            vec![DMatrix::from_element(1, 1, g)],
            vec![DMatrix::from_element(1, 1, w)],
        )
        .unwrap();
        Scenario {
            channels: ch,
            dac: DacModel::with_alpha(vec![alpha]),
            noise: NoiseModel { sigma2_user: vec![sigma], sigma2_ris: vec![sigma_v] },
            power: PowerModel { eta_ap: 0.9, eta_ris: 0.8, static_w: 1.0, p_tot_w: 3.0, include_ris_power: true },
            limits: Limits {
                ap_power_max_w: vec![1.0],
                ris_power_max_w: vec![0.1],
                ris_power_constrained: true,
                beta_max: 10.0,
                min_rate_bps_hz: 0.0,
            },
            kappa: 1.0,
        }
    }

    #[test]
    fn scalar_sinr_matches_hand_expansion() {
        let (g, w, phi, f) = (c(0.3, -0.7), c(1.1, 0.4), c(-2.0, 1.5), c(0.6, 0.2));
        let (alpha, sv, s2) = (0.1175, 0.03, 0.02);
        let s = scalar_scenario(g, w, alpha, sv, s2);
        let mut v = DesignVariables::zeros(&s.dims());
        v.f[0][0] = f;
        v.phi[0] = phi;
        let lam2 = 1.0 - alpha;
        let (pp, wg, ff, ww) = (phi.norm_sqr(), (w * g).norm_sqr(), f.norm_sqr(), w.norm_sqr());
        let want = lam2 * pp * wg * ff / (alpha * pp * wg * ff + pp * ww * sv + s2);
        for got in [sinr(&s, &v, 0, 0), sinr_psi_form(&s, &v, 0, 0), sinr_phi_form(&s, &v, 0, 0)] {
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
        // composite channel: conj(w) conj(phi) g
        let j = composite_channel(&s.channels, &v.phi, 0, 0, 0);
        assert!((j[(0, 0)] - w.conj() * phi.conj() * g).norm() < 1e-15);
    }

    #[test]
    fn zero_signal_and_zero_phi() {
        let s = scalar_scenario(c(1.0, 0.0), c(1.0, 0.0), 0.1, 0.1, 0.1);
        let mut v = DesignVariables::zeros(&s.dims());
        v.phi[0] = c(1.0, 0.0);
        assert_eq!(sinr(&s, &v, 0, 0), 0.0);
        v.f[0][0] = c(1.0, 0.0);
        v.phi[0] = c(0.0, 0.0);
        assert_eq!(sinr_phi_form(&s, &v, 0, 0), 0.0);
        assert!(composite_channel(&s.channels, &v.phi, 0, 0, 0).iter().all(|x| *x == C64::new(0.0, 0.0)));
    }

    #[test]
    fn efficiency_and_objective() {
        assert_eq!(spectral_efficiency(&[0.0, 0.0]), 0.0);
        assert_eq!(spectral_efficiency(&[1.0]), 1.0);
        assert_eq!(energy_efficiency(100.0, 4.0).unwrap(), 25.0);
        assert!(energy_efficiency(1.0, 0.0).is_err());
        assert_eq!(objective(1.0, 5.0, 2.0, 9.0), 2.0);
        assert_eq!(objective(0.0, 8.0, 2.0, 4.0), 2.0);
        assert_eq!(objective(0.5, 12.0, 2.0, 3.0), 3.0);
    }

    #[test]
    fn dac_power_examples() {
        assert!((dac_power(2.5e9, 1) - 0.02253).abs() < 1e-12);
        assert!((dac_power(2.5e9, 8) - 0.18384).abs() < 1e-12);
        assert!(dac_power(2.5e9, 3) > dac_power(2.5e9, 2));
        assert!(dac_power(3e9, 3) > dac_power(2.5e9, 3));
    }

    #[test]
    fn static_power_matches_spreadsheet_evaluation() {
        let cfg = SystemConfig::paper();
        // term by term from the parameter table
        let rf = 3.0 * 16.0 * 0.0316;
        let dac = 4.0 * 3.0 * 2.0 * 16.0 * (1.5e-5 * 2.0 + 9e-12 * 1.0 * 2.5e9);
        let users = 4.0 * 0.1;
        let backhaul = 3.0 * 0.825;
        let ris = 2.0 * 64.0 * (10f64.powf(-1.0) + 10f64.powf(-0.5)) * 1e-3;
        let want = rf + dac + users + backhaul + ris;
        let got = power_static(&cfg).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");

        let mut doubled = cfg.clone();
        doubled.subcarriers = 8;
        doubled.bandwidth_hz *= 2.0; // keep Fs fixed so only the B multiplier changes
        assert!((power_static(&doubled).unwrap() - got - dac).abs() < 1e-9);
    }

    #[test]
    fn p_tot_contributions() {
        let cfg = SystemConfig::paper();
        let st = power_static(&cfg).unwrap();
        let want = 3.0 / 0.9 + 2.0 * dbm_to_w(20.0) / 0.8 + st;
        assert!((p_tot(&cfg).unwrap() - want).abs() < 1e-12);
        assert!(p_tot(&cfg).unwrap() > st);
    }

    #[test]
    fn ris_power_noise_only() {
        let s = scalar_scenario(c(1.0, 0.0), c(1.0, 0.0), 0.1, 0.5, 0.1);
        let mut v = DesignVariables::zeros(&s.dims());
        assert_eq!(power_ris(&s.channels, &v.f, &v.phi, &s.dac, &s.noise, 0, 0.8), 0.0);
        v.phi[0] = C64::from_polar(3.0, 0.4);
        let p = power_ris(&s.channels, &v.f, &v.phi, &s.dac, &s.noise, 0, 0.8);
        assert!((p - 9.0 * 0.5 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn ap_power_example() {
        let d = Dims { aps: 1, ap_antennas: 2, users: 1, user_antennas: 1, ris: 1, ris_elements: 1, subcarriers: 1 };
        let f = vec![DVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)])];
        assert!((power_ap(&f, &d, 0, 0.9) - 1.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let mut s = scalar_scenario(c(1.0, 0.0), c(1.0, 0.0), 0.1, 0.0, 0.1);
        let mut v = DesignVariables::zeros(&s.dims());
        let r = feasibility_residuals(&s, &v);
        assert_eq!(r.max_rel(), 0.0);
        v.f[0][0] = c(2f64.sqrt(), 0.0); // 2x the 1 W budget
        v.phi[0] = c(10.0, 0.0);
        s.limits.ris_power_max_w[0] = 1e9;
        let r = feasibility_residuals(&s, &v);
        assert!((r.ap[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.modulus[0], 0.0);
    }
}
