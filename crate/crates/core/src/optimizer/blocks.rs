//! SINR models and constraints of the precoder block (variables `F`) and the
//! RIS block (variables `phi`), each with the other blocks held fixed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::sca::{BlockProblem, SinrModel};
use crate::channel::Dims;
use crate::conic::{ComplexAffine, QuadForm};
use crate::metrics::{effective_rows, omega_w, radiated_ap, DesignVariables, Scenario};
use crate::C64;

/// Which constraints a block carries besides the SINR models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockLimits {
    pub sinr_floor: f64,
    /// Relative shrink applied to every cap so that iterates returned within
    /// solver tolerance still satisfy the original constraints.
    pub backoff: f64,
}

/// Rows `r_i` with `x^H H x = sum_i |r_i^T x|^2` for a Hermitian PSD `H`.
pub(crate) fn hermitian_factor(h: &DMatrix<C64>) -> Vec<DVector<C64>> {
    let n = h.nrows();
    let sym = (h + h.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    if top <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .filter(|&i| eig.eigenvalues[i] > 1e-13 * top)
        .map(|i| eig.eigenvectors.column(i).map(|v| v.conj()) * C64::new(eig.eigenvalues[i].sqrt(), 0.0))
        .collect()
}

fn lin_terms(rows: &[DVector<C64>], base: usize) -> Vec<ComplexAffine> {
    rows.iter()
        .map(|r| ComplexAffine {
            lin: r.iter().enumerate().map(|(n, &c)| (base + n, c)).collect(),
            ..Default::default()
        })
        .collect()
}

fn single(i: usize, c: C64) -> ComplexAffine {
    ComplexAffine { lin: vec![(i, c)], ..Default::default() }
}

fn flatten(v: &[DVector<C64>]) -> Vec<C64> {
    v.iter().flat_map(|x| x.iter().copied()).collect()
}

/// Writes a flat precoder vector back into per-(q,k,b) vectors.
pub fn unflatten_precoders(z: &[C64], d: &Dims) -> Vec<DVector<C64>> {
    z.chunks(d.ap_antennas).map(DVector::from_column_slice).collect()
}

/// `(G^H diag|phi_l|^2 G)` for one AP, RIS and subcarrier, with the
/// quantization diagonal folded in: `lambda^2 A + alpha diag(A)`.
fn reflected_gram(s: &Scenario, phi: &DVector<C64>, q: usize, l: usize, b: usize) -> DMatrix<C64> {
    let d = s.dims();
    let g = s.channels.g(q, l, b);
    let p2 = phi.rows(l * d.ris_elements, d.ris_elements).map(|x| C64::new(x.norm_sqr(), 0.0));
    let a = g.adjoint() * DMatrix::from_diagonal(&p2) * g;
    let lam2 = s.dac.lambda[q].powi(2);
    let mut out = a.scale(lam2);
    for n in 0..d.ap_antennas {
        out[(n, n)] += a[(n, n)] * s.dac.alpha[q];
    }
    out
}

/// SINR models in the flattened precoders, one per `(k, b)`.
pub fn precoder_models(s: &Scenario, vars: &DesignVariables) -> Vec<SinrModel> {
    let d = s.dims();
    let nt = d.ap_antennas;
    let mut models = Vec::with_capacity(d.users * d.subcarriers);
    for k in 0..d.users {
        for b in 0..d.subcarriers {
            let kb = d.user_sub_index(k, b);
            let rows = effective_rows(&s.channels, &vars.phi, &vars.omega[kb], k, b);
            let amp = |kk: usize| ComplexAffine {
                lin: (0..d.aps)
                    .flat_map(|q| {
                        let base = d.precoder_index(q, kk, b) * nt;
                        let lam = s.dac.lambda[q];
                        rows[q].iter().enumerate().map(move |(n, &g)| (base + n, g * lam))
                    })
                    .collect(),
                ..Default::default()
            };
            let mut terms: Vec<ComplexAffine> = (0..d.users).filter(|&kk| kk != k).map(amp).collect();
            for q in 0..d.aps {
                let sa = s.dac.alpha[q].sqrt();
                if sa == 0.0 {
                    continue;
                }
                for kk in 0..d.users {
                    let base = d.precoder_index(q, kk, b) * nt;
                    for (n, &g) in rows[q].iter().enumerate() {
                        if g != C64::new(0.0, 0.0) {
                            terms.push(single(base + n, g * sa));
                        }
                    }
                }
            }
            let mut ris_noise = 0.0;
            for l in 0..d.ris {
                let ow = omega_w(&s.channels, &vars.omega[kb], l, k, b);
                let p = vars.phi.rows(l * d.ris_elements, d.ris_elements);
                ris_noise += s.noise.sigma2_ris[l]
                    * ow.iter().zip(p.iter()).map(|(a, x)| a.norm_sqr() * x.norm_sqr()).sum::<f64>();
            }
            let constant = ris_noise + vars.omega[kb].norm_squared() * s.noise.sigma2_user[kb];
            models.push(SinrModel { num: amp(k), den: QuadForm { terms, constant } });
        }
    }
    models
}

/// Precoder subproblem data at the current point.
pub fn precoder_block(s: &Scenario, vars: &DesignVariables, lim: BlockLimits) -> BlockProblem {
    let d = s.dims();
    let nt = d.ap_antennas;
    let models = precoder_models(s, vars);
    let ris_noise_w: Vec<f64> = (0..d.ris)
        .map(|l| {
            vars.phi.rows(l * d.ris_elements, d.ris_elements).norm_squared() * s.noise.sigma2_ris[l] / s.power.eta_ris
        })
        .collect();

    // P_sys(F): AP transmit power plus (for active surfaces) the reflected power
    let mut power = QuadForm { terms: Vec::new(), constant: s.power.static_w };
    for q in 0..d.aps {
        for b in 0..d.subcarriers {
            let mut h = DMatrix::<C64>::identity(nt, nt).scale(1.0 / s.power.eta_ap);
            if s.power.include_ris_power {
                for l in 0..d.ris {
                    h += reflected_gram(s, &vars.phi, q, l, b).scale(1.0 / s.power.eta_ris);
                }
            }
            let f = hermitian_factor(&h);
            for k in 0..d.users {
                power.terms.extend(lin_terms(&f, d.precoder_index(q, k, b) * nt));
            }
        }
    }
    if s.power.include_ris_power {
        power.constant += ris_noise_w.iter().sum::<f64>();
    }

    let mut caps = Vec::new();
    for q in 0..d.aps {
        let mut terms = Vec::new();
        for k in 0..d.users {
            for b in 0..d.subcarriers {
                let base = d.precoder_index(q, k, b) * nt;
                terms.extend((0..nt).map(|n| single(base + n, C64::new(1.0, 0.0))));
            }
        }
        caps.push((QuadForm { terms, constant: 0.0 }, s.limits.ap_power_max_w[q] * (1.0 - lim.backoff)));
    }
    if s.limits.ris_power_constrained {
        for l in 0..d.ris {
            let mut terms = Vec::new();
            for q in 0..d.aps {
                for b in 0..d.subcarriers {
                    let f = hermitian_factor(&reflected_gram(s, &vars.phi, q, l, b).scale(1.0 / s.power.eta_ris));
                    for k in 0..d.users {
                        terms.extend(lin_terms(&f, d.precoder_index(q, k, b) * nt));
                    }
                }
            }
            caps.push((
                QuadForm { terms, constant: ris_noise_w[l] },
                s.limits.ris_power_max_w[l] * (1.0 - lim.backoff),
            ));
        }
    }
    BlockProblem {
        n: d.precoder_count() * nt,
        models,
        expansion: flatten(&vars.f),
        sinr_floor: lim.sinr_floor,
        power,
        caps,
        modulus: None,
    }
}

/// SINR models in `phi`, one per `(k, b)`.
pub fn ris_models(s: &Scenario, vars: &DesignVariables) -> Vec<SinrModel> {
    let d = s.dims();
    let (m, lm) = (d.ris_elements, d.phi_len());
    let mut models = Vec::with_capacity(d.users * d.subcarriers);
    for k in 0..d.users {
        for b in 0..d.subcarriers {
            let kb = d.user_sub_index(k, b);
            let mut diag = DVector::<C64>::zeros(lm);
            for l in 0..d.ris {
                diag.rows_mut(l * m, m).copy_from(&omega_w(&s.channels, &vars.omega[kb], l, k, b));
            }
            // d_i (G_{q,b} f)_i, stacked over RISs
            let reflect = |q: usize, f: &DVector<C64>| {
                let mut v = DVector::<C64>::zeros(lm);
                for l in 0..d.ris {
                    v.rows_mut(l * m, m).copy_from(&(s.channels.g(q, l, b) * f));
                }
                v.component_mul(&diag)
            };
            let amp = |kk: usize| {
                let mut v = DVector::<C64>::zeros(lm);
                for q in 0..d.aps {
                    v += reflect(q, &vars.f[d.precoder_index(q, kk, b)]) * C64::new(s.dac.lambda[q], 0.0);
                }
                ComplexAffine { conj_lin: v.iter().enumerate().map(|(i, &c)| (i, c)).collect(), ..Default::default() }
            };
            let mut terms: Vec<ComplexAffine> = (0..d.users).filter(|&kk| kk != k).map(amp).collect();

            // quantization: phi^H V V^H phi with columns sqrt(alpha c_n) d (.) G[:, n]
            let mut cols = Vec::new();
            for q in 0..d.aps {
                for n in 0..d.ap_antennas {
                    let c: f64 = (0..d.users).map(|kk| vars.f[d.precoder_index(q, kk, b)][n].norm_sqr()).sum();
                    let w = (s.dac.alpha[q] * c).sqrt();
                    if w == 0.0 {
                        continue;
                    }
                    let mut v = DVector::<C64>::zeros(lm);
                    for l in 0..d.ris {
                        v.rows_mut(l * m, m).copy_from(&s.channels.g(q, l, b).column(n));
                    }
                    cols.push(v.component_mul(&diag) * C64::new(w, 0.0));
                }
            }
            if !cols.is_empty() {
                let v = DMatrix::from_columns(&cols);
                let svd = v.svd(true, false);
                let u = svd.u.expect("left singular vectors requested");
                let top = svd.singular_values.iter().fold(0.0f64, |a, x| a.max(*x));
                for (j, &sv) in svd.singular_values.iter().enumerate() {
                    if sv > 1e-12 * top {
                        terms.push(ComplexAffine {
                            conj_lin: u.column(j).iter().enumerate().map(|(i, &c)| (i, c * sv)).collect(),
                            ..Default::default()
                        });
                    }
                }
            }
            for i in 0..lm {
                let c = s.noise.sigma2_ris[i / m].sqrt() * diag[i].norm();
                if c > 0.0 {
                    terms.push(single(i, C64::new(c, 0.0)));
                }
            }
            let constant = vars.omega[kb].norm_squared() * s.noise.sigma2_user[kb];
            models.push(SinrModel { num: amp(k), den: QuadForm { terms, constant } });
        }
    }
    models
}

/// `c_i` such that the reflected power of RIS `l` is `sum_{i in l} c_i |phi_i|^2`.
pub fn reflection_weights(s: &Scenario, f: &[DVector<C64>]) -> Vec<f64> {
    let d = s.dims();
    let m = d.ris_elements;
    let mut c = vec![0.0; d.phi_len()];
    for l in 0..d.ris {
        for b in 0..d.subcarriers {
            for q in 0..d.aps {
                let g = s.channels.g(q, l, b);
                let mut cov = vec![0.0; d.ap_antennas];
                for k in 0..d.users {
                    let fq = &f[d.precoder_index(q, k, b)];
                    let gf = g * fq;
                    for mm in 0..m {
                        c[l * m + mm] += s.dac.lambda[q].powi(2) * gf[mm].norm_sqr();
                    }
                    for (cv, x) in cov.iter_mut().zip(fq.iter()) {
                        *cv += x.norm_sqr();
                    }
                }
                for mm in 0..m {
                    let row: f64 = (0..d.ap_antennas).map(|n| g[(mm, n)].norm_sqr() * cov[n]).sum();
                    c[l * m + mm] += s.dac.alpha[q] * row;
                }
            }
        }
        for mm in 0..m {
            c[l * m + mm] += s.noise.sigma2_ris[l];
        }
    }
    c
}

/// RIS subproblem data at the current point.
pub fn ris_block(s: &Scenario, vars: &DesignVariables, lim: BlockLimits) -> BlockProblem {
    let d = s.dims();
    let m = d.ris_elements;
    let models = ris_models(s, vars);
    let c = reflection_weights(s, &vars.f);
    let weight = |i: usize| single(i, C64::new((c[i] / s.power.eta_ris).sqrt(), 0.0));

    let p_ap: f64 = (0..d.aps).map(|q| radiated_ap(&vars.f, &d, q) / s.power.eta_ap).sum();
    let mut power = QuadForm { terms: Vec::new(), constant: s.power.static_w + p_ap };
    if s.power.include_ris_power {
        power.terms.extend((0..d.phi_len()).map(weight));
    }
    let mut caps = Vec::new();
    if s.limits.ris_power_constrained {
        for l in 0..d.ris {
            let terms = (l * m..(l + 1) * m).map(weight).collect();
            caps.push((QuadForm { terms, constant: 0.0 }, s.limits.ris_power_max_w[l] * (1.0 - lim.backoff)));
        }
    }
    BlockProblem {
        n: d.phi_len(),
        models,
        expansion: vars.phi.iter().copied().collect(),
        sinr_floor: lim.sinr_floor,
        power,
        caps,
        modulus: Some(s.limits.beta_max * (1.0 - lim.backoff)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reproduces_quadratic_form() {
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.5, 0.5), C64::new(0.5, -0.5), C64::new(1.0, 0.0)],
        );
        let x = DVector::from_vec(vec![C64::new(0.3, -1.0), C64::new(0.7, 0.2)]);
        let want = (x.adjoint() * &h * &x)[(0, 0)].re;
        let got: f64 = hermitian_factor(&h).iter().map(|r| r.dot(&x).norm_sqr()).sum();
        assert!((want - got).abs() < 1e-12);
        assert!(hermitian_factor(&DMatrix::zeros(3, 3)).is_empty());
    }
}
