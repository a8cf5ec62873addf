//! Cone programs over real variables and the complex-to-real embedding used to
//! state the precoder and RIS subproblems.
//!
//! A [`ConicProgram`] maximizes a linear objective subject to blocks of affine
//! rows, each block constrained to lie in one cone. Complex variables are
//! stored interleaved (`re, im`) in the real vector.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use crate::error::{Error, Result};
use crate::C64;

/// Cone of one constraint block, in terms of its row values `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `r = 0`.
    Zero,
    /// `r >= 0`.
    Nonneg,
    /// `r_0 >= ||r_1..||`.
    Soc,
    /// `r_0 r_1 >= ||r_2..||^2`, `r_0, r_1 >= 0`.
    RotatedSoc,
    /// `r_1 exp(r_0 / r_1) <= r_2`, `r_1 > 0`.
    Exp,
}

impl Cone {
    fn tag(self) -> &'static str {
        match self {
            Cone::Zero => "zero",
            Cone::Nonneg => "nonneg",
            Cone::Soc => "soc",
            Cone::RotatedSoc => "rsoc",
            Cone::Exp => "exp",
        }
    }
}

/// Sparse real affine expression `sum_j a_j x_j + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(j: usize) -> Self {
        Self { terms: vec![(j, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, j: usize, a: f64) -> Self {
        self.terms.push((j, a));
        self
    }

    pub fn plus(mut self, other: &Affine) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub cone: Cone,
    pub rows: Vec<Affine>,
}

/// `maximize c'x` subject to every block lying in its cone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<(usize, f64)>,
    pub blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, ..Default::default() }
    }

    pub fn push(&mut self, cone: Cone, rows: Vec<Affine>) {
        self.blocks.push(ConeBlock { cone, rows });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Largest violation of any block at `x` (0 when feasible).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for b in &self.blocks {
            let r: Vec<f64> = b.rows.iter().map(|a| a.eval(x)).collect();
            let v = match b.cone {
                Cone::Zero => r.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                Cone::Nonneg => r.iter().fold(0.0f64, |m, v| m.max(-v)),
                Cone::Soc => (norm(&r[1..]) - r[0]).max(0.0),
                Cone::RotatedSoc => {
                    let (u, v) = (r[0], r[1]);
                    let w = norm(&r[2..]);
                    (-u).max(-v).max(w - ((u.max(0.0) * v.max(0.0)).sqrt())).max(0.0)
                }
                Cone::Exp => {
                    if r[1] <= 0.0 {
                        f64::INFINITY
                    } else {
                        (r[1] * (r[0] / r[1]).exp() - r[2]).max(0.0)
                    }
                }
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Plain-text listing, one block per paragraph.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vars {}", self.num_vars);
        let _ = write!(s, "maximize");
        for (j, c) in &self.objective {
            let _ = write!(s, " {c:+e}*x{j}");
        }
        let _ = writeln!(s);
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(s, "block {i} {} {}", b.cone.tag(), b.rows.len());
            for r in &b.rows {
                let _ = write!(s, "  {:+e}", r.constant);
                for (j, a) in &r.terms {
                    let _ = write!(s, " {a:+e}*x{j}");
                }
                let _ = writeln!(s);
            }
        }
        s
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Solved to reduced accuracy.
    Inaccurate,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
}

impl ConicSolution {
    pub fn usable(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Inaccurate)
    }
}

/// Solves with the interior-point backend. Returns an error only for
/// malformed programs; solver failures are reported through the status.
pub fn solve(p: &ConicProgram, tol: f64, max_iter: u32) -> Result<ConicSolution> {
    let n = p.num_vars;
    let (mut ii, mut jj, mut vv, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut cones = Vec::with_capacity(p.blocks.len());
    let mut row = 0usize;
    let mut push_row = |a: &Affine, scale: f64, row: &mut usize, b: &mut Vec<f64>| {
        for &(j, c) in &a.terms {
            ii.push(*row);
            jj.push(j);
            vv.push(-c * scale);
        }
        b.push(a.constant * scale);
        *row += 1;
    };
    for blk in &p.blocks {
        if blk.rows.iter().any(|a| a.terms.iter().any(|&(j, _)| j >= n)) {
            return Err(Error::InvalidArgument("conic row references an unknown variable".into()));
        }
        let m = blk.rows.len();
        match blk.cone {
            Cone::Zero | Cone::Nonneg | Cone::Soc | Cone::Exp => {
                let ok = match blk.cone {
                    Cone::Soc => m >= 1,
                    Cone::Exp => m == 3,
                    _ => true,
                };
                if !ok {
                    return Err(Error::InvalidArgument(format!("{} block with {m} rows", blk.cone.tag())));
                }
                for a in &blk.rows {
                    push_row(a, 1.0, &mut row, &mut b);
                }
                cones.push(match blk.cone {
                    Cone::Zero => SupportedConeT::ZeroConeT(m),
                    Cone::Nonneg => SupportedConeT::NonnegativeConeT(m),
                    Cone::Soc => SupportedConeT::SecondOrderConeT(m),
                    _ => SupportedConeT::ExponentialConeT(),
                });
            }
            Cone::RotatedSoc => {
                if m < 2 {
                    return Err(Error::InvalidArgument("rsoc block needs at least two rows".into()));
                }
                // u v >= ||w||^2  <=>  (u+v)/2 >= ||(w, (u-v)/2)||
                let (u, v) = (&blk.rows[0], &blk.rows[1]);
                push_row(&u.clone().plus(v), 0.5, &mut row, &mut b);
                push_row(&u.clone().plus(&v.clone().scaled(-1.0)), 0.5, &mut row, &mut b);
                for a in &blk.rows[2..] {
                    push_row(a, 1.0, &mut row, &mut b);
                }
                cones.push(SupportedConeT::SecondOrderConeT(m));
            }
        }
    }
    let a = CscMatrix::new_from_triplets(row, n, ii, jj, vv);
    let pm = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for &(j, c) in &p.objective {
        if j >= n {
            return Err(Error::InvalidArgument("objective references an unknown variable".into()));
        }
        q[j] -= c;
    }
    let settings = DefaultSettings::<f64> {
        verbose: false,
        max_iter,
        tol_gap_abs: tol,
        tol_gap_rel: tol,
        tol_feas: tol,
        ..Default::default()
    };
    let mut solver = DefaultSolver::new(&pm, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::InvalidArgument(format!("conic backend rejected the program: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        // stalled iterates are returned too; callers re-verify every candidate
        // a stalled run returns its last good iterate; callers re-verify candidates
        SolverStatus::AlmostSolved | SolverStatus::InsufficientProgress => SolveStatus::Inaccurate,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        _ => SolveStatus::Failed,
    };
    Ok(ConicSolution {
        status,
        objective: p.objective_value(&sol.x),
        x: sol.x.clone(),
        primal_residual: sol.r_prim,
        dual_residual: sol.r_dual,
        iterations: sol.iterations,
    })
}

/// Complex affine expression in complex variables `z`:
/// `sum a_i z_i + sum b_i conj(z_i) + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexAffine {
    pub lin: Vec<(usize, C64)>,
    pub conj_lin: Vec<(usize, C64)>,
    pub constant: C64,
}

impl ComplexAffine {
    pub fn eval(&self, z: &[C64]) -> C64 {
        self.constant
            + self.lin.iter().map(|&(i, a)| a * z[i]).sum::<C64>()
            + self.conj_lin.iter().map(|&(i, b)| b * z[i].conj()).sum::<C64>()
    }

    pub fn scaled(mut self, s: C64) -> Self {
        for t in self.lin.iter_mut().chain(self.conj_lin.iter_mut()) {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    /// Same expression in `z' = z / s`.
    pub fn in_scaled_vars(mut self, s: f64) -> Self {
        for t in self.lin.iter_mut().chain(self.conj_lin.iter_mut()) {
            t.1 *= s;
        }
        self
    }

    /// Real part as a real affine expression, with `z_i` stored at
    /// `offset + 2i` (real) and `offset + 2i + 1` (imaginary).
    pub fn re(&self, offset: usize) -> Affine {
        let mut out = Affine::constant(self.constant.re);
        for &(i, a) in &self.lin {
            out.terms.push((offset + 2 * i, a.re));
            out.terms.push((offset + 2 * i + 1, -a.im));
        }
        for &(i, b) in &self.conj_lin {
            out.terms.push((offset + 2 * i, b.re));
            out.terms.push((offset + 2 * i + 1, b.im));
        }
        out
    }

    pub fn im(&self, offset: usize) -> Affine {
        let mut out = Affine::constant(self.constant.im);
        for &(i, a) in &self.lin {
            out.terms.push((offset + 2 * i, a.im));
            out.terms.push((offset + 2 * i + 1, a.re));
        }
        for &(i, b) in &self.conj_lin {
            out.terms.push((offset + 2 * i, b.im));
            out.terms.push((offset + 2 * i + 1, -b.re));
        }
        out
    }
}

/// `sum_i |a_i(z)|^2 + c` with `c >= 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadForm {
    pub terms: Vec<ComplexAffine>,
    pub constant: f64,
}

impl QuadForm {
    pub fn eval(&self, z: &[C64]) -> f64 {
        self.constant + self.terms.iter().map(|t| t.eval(z).norm_sqr()).sum::<f64>()
    }

    /// Same form in `z' = z / s`.
    pub fn in_scaled_vars(self, s: f64) -> Self {
        Self { terms: self.terms.into_iter().map(|t| t.in_scaled_vars(s)).collect(), constant: self.constant }
    }

    /// Rows `Re a_1, Im a_1, Re a_2, ...` scaled by `s`.
    pub fn rows(&self, offset: usize, s: f64) -> Vec<Affine> {
        self.terms.iter().flat_map(|t| [t.re(offset).scaled(s), t.im(offset).scaled(s)]).collect()
    }
}

/// Reads complex variables back from an interleaved real vector.
pub fn unpack_complex(x: &[f64], offset: usize, n: usize) -> Vec<C64> {
    (0..n).map(|i| C64::new(x[offset + 2 * i], x[offset + 2 * i + 1])).collect()
}

pub fn pack_complex(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}
