//! Invariant suite behind `cfris validate`.
//!
//! Each check compares one module against an independent evaluation on
//! seeded random instances and reports the worst observed error next to its
//! tolerance. All reported numbers are deterministic for a given seed.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{antenna_gain, generate_channels, path_loss, place_nodes, subcarrier_frequencies};
use crate::config::SystemConfig;
use crate::conic::{pack_complex, unpack_complex, ComplexAffine};
use crate::error::Result;
use crate::harness::{run_trial, Method};
use crate::metrics::{dac_power, feasibility_residuals, sinr, sinr_phi_form, sinr_psi_form, DesignVariables, Scenario};
use crate::optimizer::blocks::{precoder_models, ris_models};
use crate::optimizer::{mmse_filters, update_tau};
use crate::quantization::distortion_factor;
use crate::rng::{mix64, stream, Stream};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed error (or violation) across the samples.
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn cn(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Random channel draw for `seed` under `config`.
pub fn random_scenario(config: &SystemConfig, seed: u64) -> Result<Scenario> {
    let geometry = place_nodes(config, seed)?;
    let channels = generate_channels(config, &geometry, seed)?;
    Scenario::from_config(config, channels)
}

/// Random design: precoders within the AP budgets, RIS coefficients inside
/// the modulus bound, unit-norm receive filters.
pub fn random_design(s: &Scenario, rng: &mut ChaCha8Rng) -> DesignVariables {
    let d = s.dims();
    let mut v = DesignVariables::zeros(&d);
    for q in 0..d.aps {
        let mut total = 0.0;
        for k in 0..d.users {
            for b in 0..d.subcarriers {
                let f = DVector::from_fn(d.ap_antennas, |_, _| cn(rng));
                total += f.norm_squared();
                v.f[d.precoder_index(q, k, b)] = f;
            }
        }
        let scale = (s.limits.ap_power_max_w[q] * rng.random_range(0.1..1.0) / total).sqrt();
        for k in 0..d.users {
            for b in 0..d.subcarriers {
                v.f[d.precoder_index(q, k, b)] *= C64::new(scale, 0.0);
            }
        }
    }
    v.phi = DVector::from_fn(d.phi_len(), |_, _| {
        C64::from_polar(
            s.limits.beta_max * rng.random_range(0.0..1.0f64).sqrt(),
            rng.random_range(0.0..std::f64::consts::TAU),
        )
    });
    v.omega = (0..d.users * d.subcarriers)
        .map(|_| {
            let w = DVector::from_fn(d.user_antennas, |_, _| cn(rng));
            let n = w.norm();
            w / C64::new(n, 0.0)
        })
        .collect();
    v
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Worst relative disagreement between the three SINR routes.
pub fn check_sinr_forms(config: &SystemConfig, seed: u64, instances: usize) -> Result<Check> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let inst = mix64(seed ^ (i as u64 + 1));
        let s = random_scenario(config, inst)?;
        let mut rng = stream(inst, Stream::Validation);
        let v = random_design(&s, &mut rng);
        let d = s.dims();
        for k in 0..d.users {
            for b in 0..d.subcarriers {
                let a = sinr(&s, &v, k, b);
                worst = worst.max(rel(a, sinr_psi_form(&s, &v, k, b))).max(rel(a, sinr_phi_form(&s, &v, k, b)));
            }
        }
    }
    Ok(Check { name: "sinr_forms_agree", worst, tolerance: 1e-9, samples: instances })
}

/// Surrogate tightness at the expansion point and lower-bound violations at
/// perturbed points, for one block. Returns `(tightness, violation)`.
fn surrogate_errors(
    models: &[crate::optimizer::sca::SinrModel],
    zbar: &[C64],
    perturbations: usize,
    rng: &mut ChaCha8Rng,
    true_sinr: &dyn Fn(&[C64]) -> Vec<f64>,
) -> Result<(f64, f64)> {
    let mut tight = 0.0f64;
    let exact = true_sinr(zbar);
    for (m, want) in models.iter().zip(&exact) {
        tight = tight.max((m.surrogate(zbar, zbar)? - want).abs()).max((m.sinr(zbar) - want).abs() / want.max(1.0));
    }
    let mut viol = 0.0f64;
    for p in 0..perturbations {
        let radius = 10f64.powf(-3.0 + 3.0 * p as f64 / perturbations as f64);
        let z: Vec<C64> = zbar.iter().map(|x| x + cn(rng) * (radius * (x.norm() + 1e-3))).collect();
        let exact = true_sinr(&z);
        for (m, want) in models.iter().zip(&exact) {
            viol = viol.max(m.surrogate(zbar, &z)? - want);
        }
    }
    Ok((tight, viol))
}

/// Surrogate checks for both blocks, SINRs re-evaluated through `metrics`.
pub fn check_surrogates(
    config: &SystemConfig,
    seed: u64,
    instances: usize,
    perturbations: usize,
) -> Result<[Check; 4]> {
    let mut worst = [0.0f64; 4];
    for i in 0..instances {
        let inst = mix64(seed ^ (0x5ca0 + i as u64));
        let s = random_scenario(config, inst)?;
        let mut rng = stream(inst, Stream::Validation);
        let v = random_design(&s, &mut rng);
        let d = s.dims();
        let all_sinr = |vars: &DesignVariables| -> Vec<f64> {
            let mut out = Vec::new();
            for k in 0..d.users {
                for b in 0..d.subcarriers {
                    out.push(sinr(&s, vars, k, b));
                }
            }
            out
        };

        let fbar: Vec<C64> = v.f.iter().flat_map(|f| f.iter().copied()).collect();
        let f_sinr = |z: &[C64]| {
            let mut w = v.clone();
            w.f = crate::optimizer::blocks::unflatten_precoders(z, &d);
            all_sinr(&w)
        };
        let (t, l) = surrogate_errors(&precoder_models(&s, &v), &fbar, perturbations, &mut rng, &f_sinr)?;
        worst[0] = worst[0].max(t);
        worst[1] = worst[1].max(l);

        let pbar: Vec<C64> = v.phi.iter().copied().collect();
        let p_sinr = |z: &[C64]| {
            let mut w = v.clone();
            w.phi = DVector::from_column_slice(z);
            all_sinr(&w)
        };
        let (t, l) = surrogate_errors(&ris_models(&s, &v), &pbar, perturbations, &mut rng, &p_sinr)?;
        worst[2] = worst[2].max(t);
        worst[3] = worst[3].max(l);
    }
    let n = instances * perturbations;
    Ok([
        Check { name: "precoder_surrogate_tight", worst: worst[0], tolerance: 1e-9, samples: instances },
        Check { name: "precoder_surrogate_lower_bound", worst: worst[1], tolerance: 1e-9, samples: n },
        Check { name: "ris_surrogate_tight", worst: worst[2], tolerance: 1e-9, samples: instances },
        Check { name: "ris_surrogate_lower_bound", worst: worst[3], tolerance: 1e-9, samples: n },
    ])
}

/// No random unit filter beats the MMSE filter.
pub fn check_mmse(config: &SystemConfig, seed: u64, instances: usize, filters: usize) -> Result<Check> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let inst = mix64(seed ^ (0x3333 + i as u64));
        let s = random_scenario(config, inst)?;
        let mut rng = stream(inst, Stream::Validation);
        let mut v = random_design(&s, &mut rng);
        v.omega = mmse_filters(&s, &v.f, &v.phi)?;
        worst = worst.max(mmse_excess(&s, &v, filters, &mut rng));
    }
    Ok(Check { name: "mmse_dominates_random_filters", worst, tolerance: 1e-6, samples: instances * filters })
}

/// Largest relative SINR gain of a random unit filter over `v.omega`.
pub fn mmse_excess(s: &Scenario, v: &DesignVariables, filters: usize, rng: &mut ChaCha8Rng) -> f64 {
    let d = s.dims();
    let mut worst = 0.0f64;
    for k in 0..d.users {
        for b in 0..d.subcarriers {
            let kb = d.user_sub_index(k, b);
            let best = sinr_psi_form(s, v, k, b);
            let mut w = v.clone();
            for _ in 0..filters {
                let r = DVector::from_fn(d.user_antennas, |_, _| cn(rng));
                let n = r.norm();
                w.omega[kb] = r / C64::new(n, 0.0);
                let other = sinr_psi_form(s, &w, k, b);
                worst = worst.max((other - best) / best.max(f64::MIN_POSITIVE));
            }
        }
    }
    worst
}

/// `tau*` beats `tau*(1 +- {0.1, 0.01})` on the transformed quadratic.
pub fn check_tau(seed: u64, samples: usize) -> Check {
    let mut rng = stream(seed, Stream::Validation);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let rho: f64 = rng.random_range(0.01..50.0);
        let p: f64 = rng.random_range(0.1..20.0);
        let t = update_tau(rho, p);
        let quad = |t: f64| 2.0 * t * rho.sqrt() - t * t * p;
        for f in [0.9, 1.1, 0.99, 1.01] {
            worst = worst.max(quad(t * f) - quad(t));
        }
    }
    Check { name: "tau_maximizes_quadratic", worst, tolerance: 0.0, samples }
}

/// Closed-form micro-oracles.
pub fn check_micro() -> Check {
    let mut worst = 0.0f64;
    // free-space spreading at 0.14 THz over 10 m with absorption 6e-5 /m
    let want = 3.0e8 / (4.0 * std::f64::consts::PI * 0.14e12 * 10.0) * (-6e-5f64 * 10.0 / 2.0).exp();
    worst = worst.max(rel(path_loss(0.14e12, 10.0, 6e-5).unwrap_or(f64::NAN), want));
    worst = worst.max(rel(dac_power(2.5e9, 1), 0.02253)).max(rel(dac_power(2.5e9, 8), 0.18384));
    worst = worst.max(rel(distortion_factor(3).unwrap_or(f64::NAN), 0.03454));
    let six = std::f64::consts::PI * 3f64.sqrt() / 2.0 * 2f64.powi(-12);
    worst = worst.max(rel(distortion_factor(6).unwrap_or(f64::NAN), six));
    match subcarrier_frequencies(0.14e12, 5e9, 4) {
        Ok(g) => {
            for (b, want) in [0.138125e12, 0.139375e12, 0.140625e12, 0.141875e12].iter().enumerate() {
                worst = worst.max(rel(g.freqs[b], *want));
            }
        }
        Err(_) => worst = f64::INFINITY,
    }
    worst = worst.max(rel(antenna_gain(64), 10f64.powf((4.0 + 10.0 * 8f64.log10()) / 10.0)));
    Check { name: "closed_form_oracles", worst, tolerance: 1e-9, samples: 10 }
}

/// Complex-to-real embedding round trip.
pub fn check_embedding(seed: u64, samples: usize) -> Check {
    let mut rng = stream(seed ^ 0xe3b, Stream::Validation);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let n = rng.random_range(1..=8usize);
        let z: Vec<C64> = (0..n).map(|_| cn(&mut rng)).collect();
        let e = ComplexAffine {
            lin: (0..n).map(|i| (i, cn(&mut rng))).collect(),
            conj_lin: (0..n).map(|i| (i, cn(&mut rng))).collect(),
            constant: cn(&mut rng),
        };
        let x = pack_complex(&z);
        let want = e.eval(&z);
        worst = worst.max((e.re(0).eval(&x) - want.re).abs()).max((e.im(0).eval(&x) - want.im).abs());
        let back = unpack_complex(&x, 0, n);
        worst = worst.max(back.iter().zip(&z).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
    }
    Check { name: "complex_embedding_round_trip", worst, tolerance: 1e-12, samples }
}

/// One optimization run: monotone trace, converged constraints and MMSE
/// optimality at the returned point. Returns three checks.
pub fn check_optimizer(config: &SystemConfig, seed: u64) -> Result<[Check; 3]> {
    let t = run_trial(config, Method::Aris, seed)?;
    let obj = t.solution.trace.objectives();
    let mut drop = 0.0f64;
    for w in obj.windows(2) {
        drop = drop.max((w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE));
    }
    let res = feasibility_residuals(&t.plan.scenario, &t.solution.vars);
    let residual = if t.solution.infeasible_rate { res.max_power_rel() } else { res.max_rel() };
    let mut rng = stream(seed, Stream::Validation);
    let excess = mmse_excess(&t.plan.scenario, &t.solution.vars, 100, &mut rng);
    Ok([
        Check { name: "objective_trace_monotone", worst: drop, tolerance: 1e-6, samples: obj.len() },
        Check { name: "constraints_satisfied", worst: residual, tolerance: 1e-6, samples: 1 },
        Check { name: "returned_filters_mmse", worst: excess, tolerance: 1e-6, samples: 100 },
    ])
}

/// Two identical runs give bit-identical rows (ignoring wall time).
pub fn check_determinism(config: &SystemConfig, seed: u64) -> Result<Check> {
    let mut a = run_trial(config, Method::RndAris, seed)?.row;
    let mut b = run_trial(config, Method::RndAris, seed)?.row;
    a.wall_ms = 0.0;
    b.wall_ms = 0.0;
    let same = a.record() == b.record();
    Ok(Check { name: "fixed_seed_determinism", worst: if same { 0.0 } else { 1.0 }, tolerance: 0.0, samples: 2 })
}

/// Runs the whole suite.
pub fn run_suite(config: &SystemConfig, seed: u64) -> Result<Vec<Check>> {
    let mut out = vec![check_micro(), check_embedding(seed, 100), check_tau(seed, 100)];
    out.push(check_sinr_forms(config, seed, 100)?);
    out.extend(check_surrogates(config, seed, 10, 10)?);
    out.push(check_mmse(config, seed, 10, 100)?);
    out.extend(check_optimizer(config, seed)?);
    out.push(check_determinism(config, seed)?);
    Ok(out)
}

/// Human-readable table.
pub fn render_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let mut s =
        format!("{:<width$}  {:>6}  {:>12}  {:>9}  {:>7}\n", "check", "result", "worst", "tolerance", "samples");
    for c in checks {
        s += &format!(
            "{:<width$}  {:>6}  {:>12.3e}  {:>9.1e}  {:>7}\n",
            c.name,
            if c.passed() { "PASS" } else { "FAIL" },
            c.worst,
            c.tolerance,
            c.samples
        );
    }
    s
}

/// Machine-readable results (`check,passed,worst,tolerance,samples`).
pub fn write_csv<W: Write>(checks: &[Check], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["check", "passed", "worst", "tolerance", "samples"])?;
    for c in checks {
        out.write_record([
            c.name.to_string(),
            c.passed().to_string(),
            c.worst.to_string(),
            c.tolerance.to_string(),
            c.samples.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
