//! Methods, single trials and Monte Carlo sweeps with CSV output.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{generate_channels, place_nodes};
use crate::config::{SystemConfig, UpaDims};
use crate::error::{invalid_arg, Error, Result};
use crate::metrics::{evaluate, feasibility_residuals, power_static, Scenario};
use crate::optimizer::{optimize, PhiPolicy, Solution};
use crate::rng::{mix64, stream, Stream};
use crate::C64;

/// Relative residual under which a run counts as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

pub const RESULT_HEADER: [&str; 12] = [
    "axis",
    "value",
    "method",
    "seed",
    "se_bps_hz",
    "ee_bps_hz_w",
    "objective",
    "p_sys_w",
    "max_residual",
    "outer_iters",
    "wall_ms",
    "feasible",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Active RIS, jointly optimized.
    Aris,
    /// Passive RIS: no amplification, noise or reflected-power budget.
    Pris,
    /// Active RIS with random fixed coefficients; only precoders optimized.
    RndAris,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Aris, Method::Pris, Method::RndAris];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Aris => "ARIS",
            Method::Pris => "PRIS",
            Method::RndAris => "RND_ARIS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "ARIS" => Ok(Method::Aris),
            "PRIS" => Ok(Method::Pris),
            "RND_ARIS" | "RND_RIS" | "RND" => Ok(Method::RndAris),
            _ => invalid_arg(format!("unknown method '{s}' (expected ARIS, PRIS or RND_ARIS)")),
        }
    }
}

/// A scenario ready for [`optimize`].
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub config: SystemConfig,
    pub scenario: Scenario,
    pub policy: PhiPolicy,
}

/// Draws geometry and channels for `seed` and applies the method's
/// overrides.
pub fn apply_method(config: &SystemConfig, method: Method, seed: u64) -> Result<RunPlan> {
    let mut cfg = config.clone();
    match method {
        Method::Aris => {}
        Method::Pris => {
            cfg.ris_noise_w = Some(0.0);
            cfg.ris_dc_w = 0.0;
            cfg.beta_max = 1.0;
            cfg.min_rate_bps_hz = 0.0;
        }
        Method::RndAris => cfg.min_rate_bps_hz = 0.0,
    }
    cfg.validate()?;
    let geometry = place_nodes(&cfg, seed)?;
    let channels = generate_channels(&cfg, &geometry, seed)?;
    let mut scenario = Scenario::from_config(&cfg, channels)?;
    let policy = match method {
        Method::Aris => PhiPolicy::Optimize,
        Method::Pris => {
            scenario.power.include_ris_power = false;
            scenario.limits.ris_power_constrained = false;
            scenario.power.p_tot_w = cfg.aps as f64 * cfg.ap_power_max_w / cfg.eta_ap + power_static(&cfg)?;
            PhiPolicy::Optimize
        }
        Method::RndAris => {
            let mut rng = stream(seed, Stream::BaselinePhases);
            let n = scenario.dims().phi_len();
            PhiPolicy::Fixed(DVector::from_iterator(
                n,
                (0..n).map(|_| C64::from_polar(cfg.beta_max, rng.random_range(0.0..std::f64::consts::TAU))),
            ))
        }
    };
    Ok(RunPlan { config: cfg, scenario, policy })
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub axis: String,
    pub value: f64,
    pub method: Method,
    pub seed: u64,
    pub se: f64,
    pub ee: f64,
    pub objective: f64,
    pub p_sys: f64,
    pub max_residual: f64,
    pub outer_iters: u32,
    pub wall_ms: f64,
    pub feasible: bool,
}

impl ResultRow {
    fn failed(axis: &str, value: f64, method: Method, seed: u64, wall_ms: f64) -> Self {
        Self {
            axis: axis.to_string(),
            value,
            method,
            seed,
            se: f64::NAN,
            ee: f64::NAN,
            objective: f64::NAN,
            p_sys: f64::NAN,
            max_residual: f64::NAN,
            outer_iters: 0,
            wall_ms,
            feasible: false,
        }
    }

    pub fn record(&self) -> [String; 12] {
        [
            self.axis.clone(),
            self.value.to_string(),
            self.method.tag().to_string(),
            self.seed.to_string(),
            self.se.to_string(),
            self.ee.to_string(),
            self.objective.to_string(),
            self.p_sys.to_string(),
            self.max_residual.to_string(),
            self.outer_iters.to_string(),
            format!("{:.3}", self.wall_ms),
            self.feasible.to_string(),
        ]
    }
}

/// Output of [`run_trial`].
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub row: ResultRow,
    pub solution: Solution,
    pub plan: RunPlan,
}

/// Runs one method on one channel draw. The row is filled from an
/// independent re-evaluation of the returned design.
pub fn run_trial(config: &SystemConfig, method: Method, seed: u64) -> Result<TrialOutput> {
    run_trial_on(config, method, seed, "none", f64::NAN)
}

fn run_trial_on(config: &SystemConfig, method: Method, seed: u64, axis: &str, value: f64) -> Result<TrialOutput> {
    let start = Instant::now();
    let plan = apply_method(config, method, seed)?;
    let solution = optimize(&plan.scenario, &plan.config.solver, &plan.policy, seed)?;
    let m = evaluate(&plan.scenario, &solution.vars);
    let max_residual = feasibility_residuals(&plan.scenario, &solution.vars).max_rel();
    let row = ResultRow {
        axis: axis.to_string(),
        value,
        method,
        seed,
        se: m.se,
        ee: m.ee,
        objective: m.objective,
        p_sys: m.power.p_sys,
        max_residual,
        outer_iters: solution.outer_iters,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        feasible: !solution.infeasible_rate && max_residual <= FEASIBILITY_TOL,
    };
    Ok(TrialOutput { row, solution, plan })
}

/// Sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Per-AP power budget, values in W.
    PowerMax,
    Kappa,
    DacBits,
    /// RIS elements per surface.
    RisElements,
    Aps,
    Users,
    /// x-offset of the user area (m).
    UserOffset,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::PowerMax => "P_A_max",
            Axis::Kappa => "kappa",
            Axis::DacBits => "dac_bits",
            Axis::RisElements => "M",
            Axis::Aps => "Q",
            Axis::Users => "K",
            Axis::UserOffset => "d_U",
        }
    }

    /// Returns `config` with the axis set to `value`.
    pub fn apply(self, config: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = config.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                invalid_arg(format!("axis {} needs a positive integer, got {v}", self.name()))
            }
        };
        match self {
            Axis::PowerMax => c.ap_power_max_w = value,
            Axis::Kappa => c.kappa = value,
            Axis::DacBits => c.dac_bits = count(value)? as u32,
            Axis::RisElements => c.ris_array = UpaDims::near_square(count(value)?),
            Axis::Aps => c.aps = count(value)?,
            Axis::Users => c.users = count(value)?,
            Axis::UserOffset => c.user_x_offset_m = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "P_A_max" | "pmax" | "power" | "p_a_max" => Axis::PowerMax,
            "kappa" => Axis::Kappa,
            "dac_bits" | "bits" => Axis::DacBits,
            "M" | "ris_elements" => Axis::RisElements,
            "Q" | "aps" => Axis::Aps,
            "K" | "users" => Axis::Users,
            "d_U" | "user_offset" | "d_u" => Axis::UserOffset,
            other => return invalid_arg(format!("unknown sweep axis '{other}'")),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: u32,
    pub base: SystemConfig,
    pub base_seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.methods.is_empty() {
            return invalid_arg("sweep needs at least one value and one method");
        }
        if self.trials == 0 {
            return invalid_arg("sweep needs at least one trial");
        }
        for &v in &self.values {
            self.axis.apply(&self.base, v)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len() * self.methods.len() * self.trials as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seed of trial `trial`. Shared across axis values and methods so every
/// point of a sweep sees the same geometry and channel draws.
pub fn trial_seed(base_seed: u64, trial: u32) -> u64 {
    mix64(base_seed ^ mix64(trial as u64))
}

fn sweep_item(spec: &SweepSpec, index: usize) -> (f64, Method, u32) {
    let per_value = spec.methods.len() * spec.trials as usize;
    let value = spec.values[index / per_value];
    let rest = index % per_value;
    (value, spec.methods[rest / spec.trials as usize], (rest % spec.trials as usize) as u32)
}

/// Runs every (value, method, trial) combination on a worker pool. Rows are
/// streamed to `out` (if given) in the deterministic value-method-trial
/// order as soon as they are available, and returned in the same order.
pub fn run_sweep<W: Write + Send>(spec: &SweepSpec, out: Option<W>) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let n = spec.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(usize, ResultRow)>();
    std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> Result<Vec<ResultRow>> {
            let mut csv_out = out.map(csv::Writer::from_writer);
            if let Some(w) = csv_out.as_mut() {
                w.write_record(RESULT_HEADER)?;
                w.flush()?;
            }
            let mut pending = BTreeMap::new();
            let mut rows = Vec::with_capacity(n);
            for (i, row) in rx {
                pending.insert(i, row);
                while let Some(row) = pending.remove(&rows.len()) {
                    if let Some(w) = csv_out.as_mut() {
                        w.write_record(row.record())?;
                        w.flush()?;
                    }
                    rows.push(row);
                }
            }
            Ok(rows)
        });
        pool.install(|| {
            (0..n).into_par_iter().for_each_with(tx, |tx, i| {
                let (value, method, trial) = sweep_item(spec, i);
                let seed = trial_seed(spec.base_seed, trial);
                let start = Instant::now();
                let row = spec
                    .axis
                    .apply(&spec.base, value)
                    .and_then(|cfg| run_trial_on(&cfg, method, seed, spec.axis.name(), value))
                    .map(|t| t.row)
                    .unwrap_or_else(|_| {
                        ResultRow::failed(spec.axis.name(), value, method, seed, start.elapsed().as_secs_f64() * 1e3)
                    });
                let _ = tx.send((i, row));
            });
        });
        writer.join().expect("writer thread panicked")
    })
}

/// Mean and range of the rows of one (value, method) point.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub method: Method,
    pub trials: usize,
    pub feasible: usize,
    pub se_mean: f64,
    pub ee_mean: f64,
    pub objective_mean: f64,
    pub se_min: f64,
    pub se_max: f64,
    pub ee_min: f64,
    pub ee_max: f64,
}

/// Arithmetic means per (value, method) over trials with finite results,
/// in first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(f64, Method)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(v, m)| v.to_bits() == r.value.to_bits() && m == r.method) {
            keys.push((r.value, r.method));
        }
    }
    keys.into_iter()
        .map(|(value, method)| {
            let group: Vec<&ResultRow> =
                rows.iter().filter(|r| r.value.to_bits() == value.to_bits() && r.method == method).collect();
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| r.se.is_finite() && r.ee.is_finite()).collect();
            let mean = |f: &dyn Fn(&ResultRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let fold = |f: &dyn Fn(&ResultRow) -> f64, init: f64, op: fn(f64, f64) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).fold(init, op)
                }
            };
            Aggregate {
                value,
                method,
                trials: group.len(),
                feasible: group.iter().filter(|r| r.feasible).count(),
                se_mean: mean(&|r| r.se),
                ee_mean: mean(&|r| r.ee),
                objective_mean: mean(&|r| r.objective),
                se_min: fold(&|r| r.se, f64::INFINITY, f64::min),
                se_max: fold(&|r| r.se, f64::NEG_INFINITY, f64::max),
                ee_min: fold(&|r| r.ee, f64::INFINITY, f64::min),
                ee_max: fold(&|r| r.ee, f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Writes rows with the fixed header.
pub fn write_rows<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULT_HEADER)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a result CSV written by this module.
pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad number '{}' in column {}", &rec[i], RESULT_HEADER[i])))
        };
        rows.push(ResultRow {
            axis: rec[0].to_string(),
            value: num(1)?,
            method: rec[2].parse()?,
            seed: rec[3].parse().map_err(|_| Error::InvalidArgument(format!("bad seed '{}'", &rec[3])))?,
            se: num(4)?,
            ee: num(5)?,
            objective: num(6)?,
            p_sys: num(7)?,
            max_residual: num(8)?,
            outer_iters: num(9)? as u32,
            wall_ms: num(10)?,
            feasible: rec[11] == *"true",
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_and_axis_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("foo".parse::<Method>().is_err());
        for a in ["P_A_max", "kappa", "dac_bits", "M", "Q", "K", "d_U"] {
            assert_eq!(a.parse::<Axis>().unwrap().name(), a);
        }
    }

    #[test]
    fn axis_application() {
        let base = SystemConfig::desk();
        assert_eq!(Axis::RisElements.apply(&base, 32.0).unwrap().ris_array, UpaDims::new(8, 4));
        assert_eq!(Axis::DacBits.apply(&base, 8.0).unwrap().dac_bits, 8);
        assert!(Axis::DacBits.apply(&base, 2.5).is_err());
        assert!(Axis::Kappa.apply(&base, 1.5).is_err());
        assert!(Axis::Aps.apply(&base, 1.0).is_err());
    }

    #[test]
    fn sweep_item_order() {
        let spec = SweepSpec {
            axis: Axis::Kappa,
            values: vec![0.0, 1.0],
            methods: vec![Method::Aris, Method::Pris],
            trials: 3,
            base: SystemConfig::desk(),
            base_seed: 1,
            threads: 1,
        };
        assert_eq!(spec.len(), 12);
        assert_eq!(sweep_item(&spec, 0), (0.0, Method::Aris, 0));
        assert_eq!(sweep_item(&spec, 4), (0.0, Method::Pris, 1));
        assert_eq!(sweep_item(&spec, 11), (1.0, Method::Pris, 2));
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
    }

    #[test]
    fn aggregate_means() {
        let mk =
            |v: f64, se: f64| ResultRow { se, ee: 2.0 * se, ..ResultRow::failed("kappa", v, Method::Aris, 0, 0.0) };
        let rows = vec![mk(0.0, 1.0), mk(0.0, 3.0), mk(1.0, 5.0), mk(1.0, f64::NAN)];
        let a = aggregate(&rows);
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].se_mean, a[0].ee_mean, a[0].se_min, a[0].se_max), (2.0, 4.0, 1.0, 3.0));
        assert_eq!((a[1].trials, a[1].se_mean), (2, 5.0));
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let row = ResultRow {
            se: 1.25,
            ee: 0.5,
            objective: 0.5,
            p_sys: 2.5,
            max_residual: 0.0,
            outer_iters: 4,
            feasible: true,
            ..ResultRow::failed("K", 2.0, Method::RndAris, 99, 1.5)
        };
        let mut buf = Vec::new();
        write_rows(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&RESULT_HEADER.join(",")));
        assert_eq!(read_rows(&buf[..]).unwrap(), vec![row]);
    }
}
