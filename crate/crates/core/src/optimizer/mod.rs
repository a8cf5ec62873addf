//! Joint precoder and RIS design.
//!
//! The ratio objective is handled with a quadratic transform: for fixed `tau`
//! the function
//!
//! ```text
//! g(F, phi; tau) = 2 kappa tau sqrt(SE) - kappa tau^2 P_sys + (1 - kappa) SE / P_tot
//! ```
//!
//! is maximized over the precoders and over the RIS coefficients in turn by
//! successive convex approximation, each SINR being replaced by its
//! linearized lower bound. Receive filters are MMSE, refreshed after each
//! block, and `tau` takes its closed form. Every accepted step weakly increases the true objective.

pub mod blocks;
pub mod sca;

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::SolverOptions;
use crate::conic::{self, unpack_complex};
use crate::error::{Error, Result};
use crate::metrics::{
    composite_channel, evaluate, feasibility_residuals, objective, DesignVariables, Metrics, Scenario,
};
use crate::rng::{stream, Stream};
use crate::C64;
use blocks::{precoder_block, ris_block, unflatten_precoders, BlockLimits};
use sca::{build, BlockProblem, Goal};

/// Relative constraint backoff, as a multiple of the backend tolerance.
const BACKOFF_FACTOR: f64 = 10.0;

/// Restoration stops when a round closes less than this share of the
/// remaining gap to the SINR floor.
const STALL_FRACTION: f64 = 0.02;

/// Unit-norm MMSE receive filters at `(F, phi)`, indexed like
/// [`crate::channel::Dims::user_sub_index`].
pub fn mmse_filters(s: &Scenario, f: &[DVector<C64>], phi: &DVector<C64>) -> Result<Vec<DVector<C64>>> {
    let d = s.dims();
    let nu = d.user_antennas;
    let mut out = Vec::with_capacity(d.users * d.subcarriers);
    for k in 0..d.users {
        for b in 0..d.subcarriers {
            let jh: Vec<DMatrix<C64>> = (0..d.aps).map(|q| composite_channel(&s.channels, phi, q, k, b)).collect();
            let a = |kk: usize| -> DVector<C64> {
                let mut v = DVector::zeros(nu);
                for q in 0..d.aps {
                    v += &jh[q] * &f[d.precoder_index(q, kk, b)] * C64::new(s.dac.lambda[q], 0.0);
                }
                v
            };
            let mut r = DMatrix::<C64>::identity(nu, nu).scale(s.noise.sigma2_user[d.user_sub_index(k, b)]);
            for kk in 0..d.users {
                let v = a(kk);
                r += &v * v.adjoint();
            }
            for q in 0..d.aps {
                let cov: DVector<C64> = DVector::from_iterator(
                    d.ap_antennas,
                    (0..d.ap_antennas).map(|n| {
                        let p: f64 = (0..d.users).map(|kk| f[d.precoder_index(q, kk, b)][n].norm_sqr()).sum();
                        C64::new(s.dac.alpha[q] * p, 0.0)
                    }),
                );
                r += &jh[q] * DMatrix::from_diagonal(&cov) * jh[q].adjoint();
            }
            for l in 0..d.ris {
                let w = s.channels.w(l, k, b);
                let p2 = phi
                    .rows(l * d.ris_elements, d.ris_elements)
                    .map(|x| C64::new(x.norm_sqr() * s.noise.sigma2_ris[l], 0.0));
                r += w.adjoint() * DMatrix::from_diagonal(&p2) * w;
            }
            let r = (&r + r.adjoint()).scale(0.5);
            let chol = r
                .cholesky()
                .ok_or_else(|| Error::InvalidState("receive covariance is not positive definite".into()))?;
            let x = chol.solve(&a(k)).map(|c| c.conj());
            let n = x.norm();
            out.push(if n > 0.0 {
                x / C64::new(n, 0.0)
            } else {
                let mut e = DVector::zeros(nu);
                e[0] = C64::new(1.0, 0.0);
                e
            });
        }
    }
    Ok(out)
}

/// `tau = sqrt(SE) / P_sys`, the maximizer of `2 tau sqrt(SE) - tau^2 P_sys`.
pub fn update_tau(se: f64, p_sys: f64) -> f64 {
    if se <= 0.0 {
        0.0
    } else {
        se.sqrt() / p_sys
    }
}

/// The transformed objective at fixed `tau`.
pub fn transformed_objective(kappa: f64, tau: f64, se: f64, p_sys: f64, p_tot: f64) -> f64 {
    2.0 * kappa * tau * se.max(0.0).sqrt() - kappa * tau * tau * p_sys + (1.0 - kappa) * se / p_tot
}

/// How a run treats the RIS coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiPolicy {
    /// Random phases from the seed, then optimized.
    Optimize,
    /// Held fixed at the given value.
    Fixed(DVector<C64>),
}

/// Feasible starting point: random RIS phases with a common amplitude and
/// precoders matched to the composite channels, each AP at half its budget.
pub fn initialize(s: &Scenario, policy: &PhiPolicy, seed: u64) -> Result<DesignVariables> {
    let d = s.dims();
    let nt = d.ap_antennas;
    let mut vars = DesignVariables::zeros(&d);
    let fixed = matches!(policy, PhiPolicy::Fixed(_));
    vars.phi = match policy {
        PhiPolicy::Fixed(p) => {
            if p.len() != d.phi_len() {
                return Err(Error::InvalidArgument(format!(
                    "fixed phi has length {}, expected {}",
                    p.len(),
                    d.phi_len()
                )));
            }
            p.clone()
        }
        PhiPolicy::Optimize => {
            let mut rng = stream(seed, Stream::InitialPhases);
            DVector::from_iterator(
                d.phi_len(),
                (0..d.phi_len()).map(|_| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))),
            )
        }
    };
    let share = |q: usize| (0.5 * s.limits.ap_power_max_w[q] / (d.users * d.subcarriers) as f64).sqrt();
    for q in 0..d.aps {
        for k in 0..d.users {
            for b in 0..d.subcarriers {
                vars.f[d.precoder_index(q, k, b)] =
                    DVector::from_element(nt, C64::new(share(q) / (nt as f64).sqrt(), 0.0));
            }
        }
    }
    let omega0 = mmse_filters(s, &vars.f, &vars.phi)?;
    for k in 0..d.users {
        for b in 0..d.subcarriers {
            let rows = crate::metrics::effective_rows(&s.channels, &vars.phi, &omega0[d.user_sub_index(k, b)], k, b);
            for q in 0..d.aps {
                let dir = rows[q].map(|x| x.conj());
                let n = dir.norm();
                if n > 0.0 {
                    vars.f[d.precoder_index(q, k, b)] = dir * C64::new(share(q) / n, 0.0);
                }
            }
        }
    }

    if s.limits.ris_power_constrained {
        let worst = (0..d.ris)
            .map(|l| {
                let p =
                    crate::metrics::power_ris(&s.channels, &vars.f, &vars.phi, &s.dac, &s.noise, l, s.power.eta_ris);
                p / s.limits.ris_power_max_w[l]
            })
            .fold(0.0f64, f64::max);
        if fixed {
            // shrink the precoders until the reflected power fits
            if worst > 1.0 {
                let mut lo = 0.0;
                let mut hi = 1.0;
                let base = vars.f.clone();
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let trial: Vec<DVector<C64>> = base.iter().map(|f| f * C64::new(mid, 0.0)).collect();
                    let ok = (0..d.ris).all(|l| {
                        crate::metrics::power_ris(&s.channels, &trial, &vars.phi, &s.dac, &s.noise, l, s.power.eta_ris)
                            <= s.limits.ris_power_max_w[l] * (1.0 - 1e-9)
                    });
                    if ok {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo == 0.0 {
                    return Err(Error::InvalidState(
                        "fixed RIS coefficients violate the reflected-power budget".into(),
                    ));
                }
                vars.f.iter_mut().for_each(|f| *f *= C64::new(lo, 0.0));
            }
        } else {
            // reflected power is homogeneous of degree two in the amplitude
            let amp = if worst > 0.0 { (1.0 / worst).sqrt() * (1.0 - 1e-9) } else { f64::INFINITY };
            let amp = amp.min(s.limits.beta_max);
            vars.phi *= C64::new(amp, 0.0);
        }
    } else if !fixed {
        vars.phi *= C64::new(s.limits.beta_max, 0.0);
    }
    vars.omega = mmse_filters(s, &vars.f, &vars.phi)?;
    let m = evaluate(s, &vars);
    vars.tau = update_tau(m.se, m.power.p_sys);
    Ok(vars)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Precoders,
    Ris,
}

fn merit(goal: Goal, m: &Metrics) -> f64 {
    match goal {
        Goal::Tradeoff { tau, kappa, p_tot } => transformed_objective(kappa, tau, m.se, m.power.p_sys, p_tot),
        Goal::MaxMin => m.sinr.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

fn block_problem(s: &Scenario, vars: &DesignVariables, which: Block, lim: BlockLimits) -> BlockProblem {
    match which {
        Block::Precoders => precoder_block(s, vars, lim),
        Block::Ris => ris_block(s, vars, lim),
    }
}

/// Inner SCA loop over one block. Returns the number of accepted iterates.
fn run_block(
    s: &Scenario,
    vars: &mut DesignVariables,
    which: Block,
    goal: Goal,
    lim: BlockLimits,
    rate_floor: f64,
    opts: &SolverOptions,
) -> Result<u32> {
    let d = s.dims();
    let mut current = merit(goal, &evaluate(s, vars));
    let mut accepted = 0;
    for _ in 0..opts.max_inner {
        let bp = block_problem(s, vars, which, lim);
        // solve with unit-sized variables; the backend stalls on |phi| ~ beta_max
        let scale = bp.modulus.unwrap_or(1.0).max(f64::MIN_POSITIVE);
        let bp = bp.in_scaled_vars(scale);
        let (prog, lay) = build(&bp, goal)?;
        let sol = conic::solve(&prog, opts.backend_tol, opts.backend_max_iter)?;
        if !sol.usable() {
            break;
        }
        let z: Vec<C64> = unpack_complex(&sol.x, lay.z, bp.n).into_iter().map(|z| z * scale).collect();
        let mut cand = vars.clone();
        match which {
            Block::Precoders => cand.f = unflatten_precoders(&z, &d),
            Block::Ris => cand.phi = DVector::from_vec(z),
        }
        let m = evaluate(s, &cand);
        let res = feasibility_residuals(s, &cand);
        let rate_ok = rate_floor <= 0.0 || m.rate.iter().all(|&r| r >= rate_floor * (1.0 - 1e-6));
        if res.max_power_rel() > 1e-6 || !rate_ok {
            break;
        }
        let next = merit(goal, &m);
        if !(next >= current - 1e-12 * current.abs()) {
            break;
        }
        *vars = cand;
        accepted += 1;
        let gain = next - current;
        current = next;
        let tol = match goal {
            Goal::Tradeoff { .. } => opts.eps_inner,
            Goal::MaxMin => opts.eps_inner * current.abs().max(1e-12),
        };
        if gain < tol {
            break;
        }
    }
    Ok(accepted)
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: u32,
    pub objective: f64,
    pub se: f64,
    pub ee: f64,
    pub tau: f64,
    pub max_residual: f64,
    pub inner_f: u32,
    pub inner_phi: u32,
    pub wall_ms: f64,
}

/// Per-outer-iteration record; row 0 is the starting point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: [&str; 9] =
    ["iter", "objective", "se_bps_hz", "ee_bps_hz_w", "tau", "max_residual", "inner_f", "inner_phi", "wall_ms"];

impl SolveTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACE_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.iter.to_string(),
                r.objective.to_string(),
                r.se.to_string(),
                r.ee.to_string(),
                r.tau.to_string(),
                r.max_residual.to_string(),
                r.inner_f.to_string(),
                r.inner_phi.to_string(),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Result of [`optimize`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub vars: DesignVariables,
    pub metrics: Metrics,
    pub trace: SolveTrace,
    pub outer_iters: u32,
    pub converged: bool,
    /// The minimum-rate constraint could not be met and was dropped.
    pub infeasible_rate: bool,
}

/// Raises the smallest SINR until every pair meets `floor`. Returns whether
/// the floor was reached.
fn restore_rates(
    s: &Scenario,
    vars: &mut DesignVariables,
    policy: &PhiPolicy,
    floor: f64,
    opts: &SolverOptions,
) -> Result<bool> {
    let lim = BlockLimits { sinr_floor: 0.0, backoff: BACKOFF_FACTOR * opts.backend_tol };
    let min_sinr = |v: &DesignVariables| evaluate(s, v).sinr.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = min_sinr(vars);
    for _ in 0..opts.max_outer {
        if best >= floor {
            return Ok(true);
        }
        run_block(s, vars, Block::Precoders, Goal::MaxMin, lim, 0.0, opts)?;
        if matches!(policy, PhiPolicy::Optimize) {
            vars.omega = mmse_filters(s, &vars.f, &vars.phi)?;
            run_block(s, vars, Block::Ris, Goal::MaxMin, lim, 0.0, opts)?;
        }
        vars.omega = mmse_filters(s, &vars.f, &vars.phi)?;
        let now = min_sinr(vars);
        if now >= floor {
            return Ok(true);
        }
        // give up once progress per round cannot close the gap in time
        if now - best < STALL_FRACTION * (floor - now) {
            return Ok(false);
        }
        best = now;
    }
    Ok(best >= floor)
}

fn trace_row(
    s: &Scenario,
    vars: &DesignVariables,
    m: &Metrics,
    iter: u32,
    inner: (u32, u32),
    start: Instant,
) -> TraceRow {
    TraceRow {
        iter,
        objective: m.objective,
        se: m.se,
        ee: m.ee,
        tau: vars.tau,
        max_residual: feasibility_residuals(s, vars).max_rel(),
        inner_f: inner.0,
        inner_phi: inner.1,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Alternating optimization of precoders, RIS coefficients, receive filters
/// and `tau`.
pub fn optimize(s: &Scenario, opts: &SolverOptions, policy: &PhiPolicy, seed: u64) -> Result<Solution> {
    opts.validate()?;
    let start = Instant::now();
    let mut vars = initialize(s, policy, seed)?;
    let backoff = BACKOFF_FACTOR * opts.backend_tol;

    let mut infeasible_rate = false;
    let mut rate_floor = 0.0;
    let mut sinr_floor = 0.0;
    if s.limits.min_rate_bps_hz > 0.0 {
        let target = s.limits.sinr_floor() + backoff * (1.0 + s.limits.sinr_floor());
        let min_sinr = evaluate(s, &vars).sinr.iter().copied().fold(f64::INFINITY, f64::min);
        let ok = min_sinr >= target * (1.0 + 1e-3)
            || (opts.rate_continuation && restore_rates(s, &mut vars, policy, target * (1.0 + 1e-3), opts)?);
        if ok {
            sinr_floor = target;
            rate_floor = s.limits.min_rate_bps_hz;
        } else {
            infeasible_rate = true;
        }
    }
    let lim = BlockLimits { sinr_floor, backoff };

    let mut m = evaluate(s, &vars);
    vars.tau = update_tau(m.se, m.power.p_sys);
    let mut trace = SolveTrace { rows: vec![trace_row(s, &vars, &m, 0, (0, 0), start)] };
    let mut converged = false;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let prev = m.objective;
        vars.tau = update_tau(m.se, m.power.p_sys);
        let goal = Goal::Tradeoff { tau: vars.tau, kappa: s.kappa, p_tot: s.power.p_tot_w };
        let inner_f = run_block(s, &mut vars, Block::Precoders, goal, lim, rate_floor, opts)?;
        let inner_phi = if matches!(policy, PhiPolicy::Optimize) {
            vars.omega = mmse_filters(s, &vars.f, &vars.phi)?;
            run_block(s, &mut vars, Block::Ris, goal, lim, rate_floor, opts)?
        } else {
            0
        };
        vars.omega = mmse_filters(s, &vars.f, &vars.phi)?;
        m = evaluate(s, &vars);
        trace.rows.push(trace_row(s, &vars, &m, outer as u32, (inner_f, inner_phi), start));
        if (m.objective - prev).abs() < opts.eps_outer * prev.abs() {
            converged = true;
            break;
        }
    }
    vars.tau = update_tau(m.se, m.power.p_sys);
    debug_assert!(
        (objective(s.kappa, m.se, m.ee, m.power.p_tot) - m.objective).abs() <= 1e-12 * m.objective.abs().max(1.0)
    );
    Ok(Solution { vars, metrics: m, trace, outer_iters: outer as u32, converged, infeasible_rate })
}
