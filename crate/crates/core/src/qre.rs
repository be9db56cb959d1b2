//! Residual-certified solver for the regularized equilibrium.
//!
//! The QRE logits solve `θ = θ_ref + Pπ_θ/β`. The solution is unique at the
//! level of policies, and in the zero-offset gauge also at the level of
//! logits, so any `θ` whose residual `‖θ − θ_ref − Pπ_θ/β‖∞` is below the
//! tolerance is accepted regardless of how it was found.
//!
//! The same machinery solves the modified map `θ = θ_ref + Pπ̃_θ/β`, where
//! `π̃_θ = softmax((1−γ)θ + γθ_ref)` is the geometric mixture used by
//! Nash-MD; its solution is Nash-MD's own fixed point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{inf_norm, softmax, GameSpec};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

/// Iterations without improving the best residual before giving up early.
const STALL_LIMIT: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    pub logits: Vec<f64>,
    pub residual_inf_norm: f64,
    pub tolerance: f64,
}

impl EquilibriumCertificate {
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn is_valid(&self) -> bool {
        self.residual_inf_norm <= self.tolerance
    }
}

/// Opponent policy under mixture coefficient `gamma`.
pub(crate) fn mixture_logits(spec: &GameSpec, logits: &[f64], gamma: f64) -> Vec<f64> {
    if gamma == 0.0 {
        return logits.to_vec();
    }
    logits
        .iter()
        .zip(spec.ref_logits())
        .map(|(t, r)| (1.0 - gamma) * t + gamma * r)
        .collect()
}

fn residual_vec(spec: &GameSpec, logits: &[f64], gamma: f64) -> Vec<f64> {
    let opp = softmax(&mixture_logits(spec, logits, gamma));
    let p_opp = spec.matrix().mul_vec(&opp);
    let beta = spec.beta();
    logits
        .iter()
        .zip(spec.ref_logits())
        .zip(&p_opp)
        .map(|((t, r), p)| t - r - p / beta)
        .collect()
}

/// `‖θ − θ_ref − Pπ_θ/β‖∞`.
pub fn fixed_point_residual(spec: &GameSpec, logits: &[f64]) -> f64 {
    inf_norm(&residual_vec(spec, logits, 0.0))
}

/// `‖θ − θ_ref − Pπ̃_θ/β‖∞` for the mixture map.
pub fn mixture_fixed_point_residual(spec: &GameSpec, logits: &[f64], gamma: f64) -> f64 {
    inf_norm(&residual_vec(spec, logits, gamma))
}

/// Solves for the QRE starting from the reference logits.
pub fn qre_solve(spec: &GameSpec, tol: f64, max_iters: usize) -> Result<EquilibriumCertificate> {
    qre_solve_from(spec, spec.ref_logits(), tol, max_iters)
}

/// Solves for the QRE from an arbitrary starting point.
pub fn qre_solve_from(
    spec: &GameSpec,
    init: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<EquilibriumCertificate> {
    solve(spec, 0.0, init, tol, max_iters)
}

/// Solves `θ = θ_ref + Pπ̃_θ/β` for mixture coefficient `gamma ∈ [0, 1]`.
pub fn mixture_fixed_point(
    spec: &GameSpec,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<EquilibriumCertificate> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "mixture coefficient must be in [0,1], got {gamma}"
        )));
    }
    solve(spec, gamma, spec.ref_logits(), tol, max_iters)
}

fn solve(
    spec: &GameSpec,
    gamma: f64,
    init: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<EquilibriumCertificate> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be positive"));
    }
    check_len(spec.n(), init.len())?;
    crate::game::ensure_finite(init, "initial logit")?;

    let n = spec.n();
    let beta = spec.beta();
    // extragradient fallback step, contractive for eta <= 1/(beta + 3)
    let eb = beta / (beta + 3.0);

    let mut theta = init.to_vec();
    let mut f = residual_vec(spec, &theta, gamma);
    let mut r = inf_norm(&f);
    let mut best = (r, theta.clone());
    let mut since_best = 0;

    for _ in 0..max_iters {
        if r <= tol {
            break;
        }
        let next = newton_step(spec, gamma, &theta, &f).or_else(|| {
            // θ_half = θ − ηβ F(θ), then θ − ηβ(θ − θ_ref − Pπ̃_half/β)
            let half: Vec<f64> = theta.iter().zip(&f).map(|(t, g)| t - eb * g).collect();
            let half_res = residual_vec(spec, &half, gamma);
            let step: Vec<f64> = theta
                .iter()
                .zip(&half)
                .zip(&half_res)
                .map(|((t, h), g)| t - eb * (t - h + g))
                .collect();
            Some(step)
        });
        theta = next.expect("fallback always yields a step");
        f = residual_vec(spec, &theta, gamma);
        r = inf_norm(&f);
        if !r.is_finite() {
            break;
        }
        if r < best.0 {
            best = (r, theta.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > STALL_LIMIT {
                break;
            }
        }
    }
    let (residual, logits) = best;
    debug_assert_eq!(logits.len(), n);
    if residual <= tol {
        Ok(EquilibriumCertificate {
            logits,
            residual_inf_norm: residual,
            tolerance: tol,
        })
    } else {
        Err(Error::NonConvergence {
            iters: max_iters,
            best_residual: residual,
        })
    }
}

/// Newton step with backtracking on `‖F‖₂`; `None` when no sufficient
/// decrease is found.
fn newton_step(spec: &GameSpec, gamma: f64, theta: &[f64], f: &[f64]) -> Option<Vec<f64>> {
    let n = spec.n();
    let beta = spec.beta();
    let opp = softmax(&mixture_logits(spec, theta, gamma));
    // J = I − (1−γ) P (diag π̃ − π̃π̃ᵀ) / β
    let p = spec.matrix();
    let mut jac = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let row_dot: f64 = (0..n).map(|k| p.get(i, k) * opp[k]).sum();
        for j in 0..n {
            let d = p.get(i, j) * opp[j] - row_dot * opp[j];
            jac[(i, j)] -= (1.0 - gamma) * d / beta;
        }
    }
    let rhs = DVector::from_iterator(n, f.iter().map(|x| -x));
    let dir = jac.lu().solve(&rhs)?;
    if dir.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let norm0 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut alpha = 1.0;
    while alpha > 1e-10 {
        let cand: Vec<f64> = theta
            .iter()
            .zip(dir.iter())
            .map(|(t, d)| t + alpha * d)
            .collect();
        let fc = residual_vec(spec, &cand, gamma);
        let norm = fc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm.is_finite() && norm <= (1.0 - 1e-4 * alpha) * norm0 {
            return Some(cand);
        }
        alpha *= 0.5;
    }
    None
}
