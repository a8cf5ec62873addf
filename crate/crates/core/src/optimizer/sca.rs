//! Generic SCA block: SINR models with an affine numerator and a convex
//! quadratic denominator, their linearized lower bounds and the conic program
//! built from them.

use crate::conic::{Affine, ComplexAffine, Cone, ConicProgram, QuadForm};
use crate::error::{Error, Result};
use crate::C64;

/// `SINR(z) = |num(z)|^2 / den(z)` for one (user, subcarrier) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrModel {
    pub num: ComplexAffine,
    pub den: QuadForm,
}

impl SinrModel {
    pub fn sinr(&self, z: &[C64]) -> f64 {
        self.num.eval(z).norm_sqr() / self.den.eval(z)
    }

    /// `2 Re(conj(x) num(z)) / y - |x|^2 den(z) / y^2` with `x = num(zbar)`,
    /// `y = den(zbar)`. Equal to the SINR at `zbar`, below it elsewhere.
    pub fn surrogate(&self, zbar: &[C64], z: &[C64]) -> Result<f64> {
        let (x, y) = self.expansion(zbar)?;
        Ok(2.0 * (x.conj() * self.num.eval(z)).re / y - x.norm_sqr() * self.den.eval(z) / (y * y))
    }

    fn expansion(&self, zbar: &[C64]) -> Result<(C64, f64)> {
        let y = self.den.eval(zbar);
        if !(y > 0.0) {
            return Err(Error::InvalidState(format!(
                "SINR denominator must be positive at the expansion point, got {y}"
            )));
        }
        Ok((self.num.eval(zbar), y))
    }
}

/// One block subproblem in complex variables `z`.
#[derive(Debug, Clone)]
pub struct BlockProblem {
    pub n: usize,
    pub models: Vec<SinrModel>,
    pub expansion: Vec<C64>,
    /// Lower bound on every surrogate SINR (ignored by [`Goal::MaxMin`]).
    pub sinr_floor: f64,
    /// `P_sys(z)`.
    pub power: QuadForm,
    /// `q(z) <= cap`.
    pub caps: Vec<(QuadForm, f64)>,
    /// Elementwise `|z_i| <= bound`.
    pub modulus: Option<f64>,
}

impl BlockProblem {
    /// The same problem in `z' = z / s`.
    pub fn in_scaled_vars(self, s: f64) -> Self {
        Self {
            n: self.n,
            models: self
                .models
                .into_iter()
                .map(|m| SinrModel { num: m.num.in_scaled_vars(s), den: m.den.in_scaled_vars(s) })
                .collect(),
            expansion: self.expansion.iter().map(|z| z / s).collect(),
            sinr_floor: self.sinr_floor,
            power: self.power.in_scaled_vars(s),
            caps: self.caps.into_iter().map(|(q, c)| (q.in_scaled_vars(s), c)).collect(),
            modulus: self.modulus.map(|b| b / s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Goal {
    /// `max 2 kappa tau s - kappa tau^2 p + (1 - kappa) t / P_tot`.
    Tradeoff { tau: f64, kappa: f64, p_tot: f64 },
    /// `max min_{k,b} SINR`, used to restore the rate constraints.
    MaxMin,
}

/// Real-variable positions in the built program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub z: usize,
    pub sinr: usize,
    pub log: Option<usize>,
    pub t: Option<usize>,
    pub s: Option<usize>,
    pub p: Option<usize>,
    pub r: Option<usize>,
    pub total: usize,
}

impl Layout {
    fn new(n: usize, pairs: usize, goal: Goal) -> Self {
        let sinr = 2 * n;
        let mut next = sinr + pairs;
        let mut take = |k: usize| {
            let at = next;
            next += k;
            Some(at)
        };
        match goal {
            Goal::Tradeoff { kappa, .. } => {
                let log = take(pairs);
                let t = take(1);
                let (s, p) = if kappa > 0.0 { (take(1), take(1)) } else { (None, None) };
                Self { z: 0, sinr, log, t, s, p, r: None, total: next }
            }
            Goal::MaxMin => {
                let r = take(1);
                Self { z: 0, sinr, log: None, t: None, s: None, p: None, r, total: next }
            }
        }
    }
}

fn rsoc_epigraph(u: Affine, q: &QuadForm) -> Vec<Affine> {
    // ||rows||^2 <= u * 1
    let mut rows = vec![u, Affine::constant(1.0)];
    rows.extend(q.rows(0, 1.0));
    rows
}

/// Builds the convex program for one block.
pub fn build(bp: &BlockProblem, goal: Goal) -> Result<(ConicProgram, Layout)> {
    let pairs = bp.models.len();
    let lay = Layout::new(bp.n, pairs, goal);
    let mut prog = ConicProgram::new(lay.total);

    for (i, m) in bp.models.iter().enumerate() {
        let (x, y) = m.expansion(&bp.expansion)?;
        let w = x.norm() / y;
        // u = 2 Re(conj(x) num(z)) / y - sigma - w^2 c  >=  w^2 sum |a_i(z)|^2
        let lin = m.num.clone().scaled(x.conj() * (2.0 / y));
        let u = lin.re(lay.z).term(lay.sinr + i, -1.0).plus(&Affine::constant(-w * w * m.den.constant));
        let mut rows = vec![u, Affine::constant(1.0)];
        rows.extend(m.den.rows(lay.z, w));
        prog.push(Cone::RotatedSoc, rows);
    }

    match goal {
        Goal::Tradeoff { tau, kappa, p_tot } => {
            let (log, t) = (lay.log.unwrap(), lay.t.unwrap());
            prog.push(
                Cone::Nonneg,
                (0..pairs).map(|i| Affine::var(lay.sinr + i).plus(&Affine::constant(-bp.sinr_floor))).collect(),
            );
            for i in 0..pairs {
                prog.push(
                    Cone::Exp,
                    vec![
                        Affine::var(log + i).scaled(std::f64::consts::LN_2),
                        Affine::constant(1.0),
                        Affine::var(lay.sinr + i).plus(&Affine::constant(1.0)),
                    ],
                );
            }
            let mut sum = Affine::var(t).scaled(-1.0);
            for i in 0..pairs {
                sum = sum.term(log + i, 1.0);
            }
            prog.push(Cone::Nonneg, vec![sum]);
            if (1.0 - kappa) != 0.0 {
                prog.objective.push((t, (1.0 - kappa) / p_tot));
            }
            if let (Some(s), Some(p)) = (lay.s, lay.p) {
                prog.push(Cone::RotatedSoc, vec![Affine::var(t), Affine::constant(1.0), Affine::var(s)]);
                let u = Affine::var(p).plus(&Affine::constant(-bp.power.constant));
                prog.push(
                    Cone::RotatedSoc,
                    rsoc_epigraph(u, &QuadForm { terms: bp.power.terms.clone(), constant: 0.0 }),
                );
                prog.objective.push((s, 2.0 * kappa * tau));
                prog.objective.push((p, -kappa * tau * tau));
            }
        }
        Goal::MaxMin => {
            let r = lay.r.unwrap();
            prog.push(Cone::Nonneg, (0..pairs).map(|i| Affine::var(lay.sinr + i).term(r, -1.0)).collect());
            prog.objective.push((r, 1.0));
        }
    }

    for (q, cap) in &bp.caps {
        let u = Affine::constant(cap - q.constant);
        prog.push(Cone::RotatedSoc, rsoc_epigraph(u, &QuadForm { terms: q.terms.clone(), constant: 0.0 }));
    }
    if let Some(beta) = bp.modulus {
        for i in 0..bp.n {
            prog.push(
                Cone::Soc,
                vec![Affine::constant(beta), Affine::var(lay.z + 2 * i), Affine::var(lay.z + 2 * i + 1)],
            );
        }
    }
    Ok((prog, lay))
}
