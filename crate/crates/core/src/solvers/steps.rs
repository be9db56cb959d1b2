//! One-step update rules over tabular softmax policies.
//!
//! Each step reads `Pπ` (or a comparison-based stand-in) through a
//! [`VectorEstimator`], so the same code runs in exact, Gaussian-noise and
//! sampled modes. Two successive estimates never share randomness: they are
//! consecutive draws from the estimator's stream.

use crate::error::{check_len, Error, Result};
use crate::game::{log_softmax, softmax, GameSpec};
use crate::qre::mixture_logits;
use crate::stochastic::{
    estimate_p_pi, sampled_ipo2_gradient, sampled_ipo_gradient, EstimatorMode, VectorEstimator,
};

use super::sigma::{apply_product, apply_uniform, SigmaOperator};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_logits: Vec<f64>,
    /// `θ^{t+1/2}`; present only for EGPO.
    pub half_logits: Option<Vec<f64>>,
    pub noise_draws_consumed: u64,
}

fn finite(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            iter: 0,
            what: format!("{what}[{i}] = {}", v[i]),
        }),
        None => Ok(v),
    }
}

/// `(1−ηβ)θ + ηβ(θ_ref + p/β)`.
fn mirror_update(spec: &GameSpec, logits: &[f64], p_est: &[f64], eta: f64) -> Vec<f64> {
    let beta = spec.beta();
    let eb = eta * beta;
    logits
        .iter()
        .zip(spec.ref_logits())
        .zip(p_est)
        .map(|((t, r), p)| (1.0 - eb) * t + eb * (r + p / beta))
        .collect()
}

fn prologue(spec: &GameSpec, logits: &[f64], eta: f64) -> Result<()> {
    check_len(spec.n(), logits.len())?;
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    Ok(())
}

/// Extragradient step:
/// `θ^{t+1/2} = (1−ηβ)θ^t + ηβ(θ_ref + est(Pπ^t)/β)`,
/// `θ^{t+1} = (1−ηβ)θ^t + ηβ(θ_ref + est(Pπ^{t+1/2})/β)`.
pub fn egpo_step(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    let start = est.rng.counter();
    let pi = softmax(logits);
    let p_t = estimate_p_pi(spec.matrix(), &pi, est);
    let half = finite(mirror_update(spec, logits, &p_t, eta), "half logit")?;
    let pi_half = softmax(&half);
    let p_half = estimate_p_pi(spec.matrix(), &pi_half, est);
    let next = finite(mirror_update(spec, logits, &p_half, eta), "logit")?;
    Ok(StepOutcome {
        next_logits: next,
        half_logits: Some(half),
        noise_draws_consumed: est.rng.counter() - start,
    })
}

/// Online mirror descent (Online IPO 1): the EGPO half-step alone.
pub fn omd_step(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    let start = est.rng.counter();
    let p_t = estimate_p_pi(spec.matrix(), &softmax(logits), est);
    let next = finite(mirror_update(spec, logits, &p_t, eta), "logit")?;
    Ok(StepOutcome {
        next_logits: next,
        half_logits: None,
        noise_draws_consumed: est.rng.counter() - start,
    })
}

/// Online IPO 2: `θ − (ηβn/4)·2Σ(π×π)(θ − θ_ref − est(Pπ)/β)`; sampled mode
/// uses the variance-reduced comparison gradient instead.
pub fn online_ipo2_step(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    let start = est.rng.counter();
    let pi = softmax(logits);
    let grad = match est.mode {
        EstimatorMode::Sampled { n_samples } => {
            sampled_ipo2_gradient(spec, logits, &pi, n_samples, est)?
        }
        _ => {
            let p_t = estimate_p_pi(spec.matrix(), &pi, est);
            let r = ipo_residual(spec, logits, &p_t);
            apply_product(&pi, &r)
                .into_iter()
                .map(|x| 2.0 * x)
                .collect()
        }
    };
    let lr = optimizer_lr(spec, eta);
    let next = logits.iter().zip(&grad).map(|(t, g)| t - lr * g).collect();
    Ok(StepOutcome {
        next_logits: finite(next, "logit")?,
        half_logits: None,
        noise_draws_consumed: est.rng.counter() - start,
    })
}

/// Nash-MD: the OMD update against the geometric mixture
/// `π̃ ∝ π^{1−γ} π_ref^γ`.
pub fn nash_md_step(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    gamma: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    check_gamma(gamma)?;
    let start = est.rng.counter();
    let opp = softmax(&mixture_logits(spec, logits, gamma));
    let p_opp = estimate_p_pi(spec.matrix(), &opp, est);
    let next = finite(mirror_update(spec, logits, &p_opp, eta), "logit")?;
    Ok(StepOutcome {
        next_logits: next,
        half_logits: None,
        noise_draws_consumed: est.rng.counter() - start,
    })
}

/// Nash-MD-PG: policy-gradient ascent on the inner Nash-MD objective,
/// `θ + η Σ_y π(y)[(Pπ̃)_y − β log(π(y)/π_ref(y))](e_y − π)`.
///
/// Sampled mode draws `y ∼ π`, `y' ∼ π̃` and replaces `(Pπ̃)_y` by the
/// comparison `I(y, y')`.
pub fn nash_md_pg_step(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    gamma: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    check_gamma(gamma)?;
    let start = est.rng.counter();
    let n = spec.n();
    let beta = spec.beta();
    let pi = softmax(logits);
    let log_pi = log_softmax(logits);
    let log_ratio: Vec<f64> = log_pi
        .iter()
        .zip(spec.ref_log_probs())
        .map(|(a, b)| a - b)
        .collect();
    let opp = softmax(&mixture_logits(spec, logits, gamma));

    let mut grad = vec![0.0; n];
    match est.mode {
        EstimatorMode::Sampled { n_samples } => {
            let pi_dist = rand_distr::weighted::WeightedIndex::new(&pi).expect("positive policy");
            let opp_dist = rand_distr::weighted::WeightedIndex::new(&opp).expect("positive policy");
            use rand_distr::Distribution;
            for _ in 0..n_samples {
                let y = pi_dist.sample(&mut est.rng);
                let z = opp_dist.sample(&mut est.rng);
                let adv = est.compare(spec.matrix(), y, z) - beta * log_ratio[y];
                for (k, g) in grad.iter_mut().enumerate() {
                    let score = if k == y { 1.0 - pi[k] } else { -pi[k] };
                    *g += adv * score;
                }
            }
            grad.iter_mut().for_each(|g| *g /= n_samples as f64);
        }
        _ => {
            let p_opp = estimate_p_pi(spec.matrix(), &opp, est);
            let adv: Vec<f64> = p_opp
                .iter()
                .zip(&log_ratio)
                .map(|(p, l)| p - beta * l)
                .collect();
            let mean_adv: f64 = pi.iter().zip(&adv).map(|(p, a)| p * a).sum();
            for k in 0..n {
                grad[k] = pi[k] * adv[k] - pi[k] * mean_adv;
            }
        }
    }
    let next = logits.iter().zip(&grad).map(|(t, g)| t + eta * g).collect();
    Ok(StepOutcome {
        next_logits: finite(next, "logit")?,
        half_logits: None,
        noise_draws_consumed: est.rng.counter() - start,
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "mixture coefficient must be in [0,1], got {gamma}"
        )))
    }
}

/// `θ − θ_ref − p/β`.
pub(crate) fn ipo_residual(spec: &GameSpec, logits: &[f64], p_mu: &[f64]) -> Vec<f64> {
    let beta = spec.beta();
    logits
        .iter()
        .zip(spec.ref_logits())
        .zip(p_mu)
        .map(|((t, r), p)| t - r - p / beta)
        .collect()
}

/// Optimizer learning rate equivalent to theory step size `eta`:
/// `η·β·n/4`.
pub fn optimizer_lr(spec: &GameSpec, eta: f64) -> f64 {
    eta * spec.beta() * spec.n() as f64 / 4.0
}

/// Inverse of [`optimizer_lr`]: the theory step size behind learning rate `lr`.
pub fn eta_from_optimizer_lr(lr: f64, beta: f64, n: usize) -> f64 {
    4.0 * lr / (beta * n as f64)
}

/// Generalized IPO loss `E_ρ[((θ − θ_ref − Pμ/β)ᵀ(e_y − e_{y'}))²] = rᵀΣ(ρ)r`.
pub fn ipo_loss(spec: &GameSpec, logits: &[f64], sigma: &SigmaOperator, mu: &[f64]) -> Result<f64> {
    check_len(spec.n(), logits.len())?;
    check_len(spec.n(), mu.len())?;
    let r = ipo_residual(spec, logits, &spec.matrix().mul_vec(mu));
    let sr = sigma.apply(&r)?;
    Ok(r.iter().zip(&sr).map(|(a, b)| a * b).sum())
}

/// `∇_θ L_IPO(θ; ρ, μ) = 2Σ(ρ)(θ − θ_ref − Pμ/β)`.
pub fn ipo_gradient(
    spec: &GameSpec,
    logits: &[f64],
    sigma: &SigmaOperator,
    mu: &[f64],
) -> Result<Vec<f64>> {
    check_len(spec.n(), logits.len())?;
    check_len(spec.n(), mu.len())?;
    check_len(spec.n(), sigma.n())?;
    let r = ipo_residual(spec, logits, &spec.matrix().mul_vec(mu));
    Ok(sigma.apply(&r)?.into_iter().map(|x| 2.0 * x).collect())
}

/// Online-IPO gradient with uniform pairs against opponent `mu`, using the
/// estimator for `Pμ` (or the sampled population loss in sampled mode).
pub(crate) fn uniform_ipo_gradient(
    spec: &GameSpec,
    logits: &[f64],
    mu: &[f64],
    est: &mut VectorEstimator,
) -> Result<Vec<f64>> {
    match est.mode {
        EstimatorMode::Sampled { n_samples } => {
            sampled_ipo_gradient(spec, logits, mu, n_samples, est)
        }
        _ => {
            let p_mu = estimate_p_pi(spec.matrix(), mu, est);
            let r = ipo_residual(spec, logits, &p_mu);
            Ok(apply_uniform(&r).into_iter().map(|x| 2.0 * x).collect())
        }
    }
}

fn ipo_descent(
    spec: &GameSpec,
    logits: &[f64],
    mu: &[f64],
    eta: f64,
    est: &mut VectorEstimator,
) -> Result<Vec<f64>> {
    let grad = uniform_ipo_gradient(spec, logits, mu, est)?;
    let lr = optimizer_lr(spec, eta);
    finite(
        logits.iter().zip(&grad).map(|(t, g)| t - lr * g).collect(),
        "logit",
    )
}

/// EGPO through the online-IPO loss:
/// `θ^{t+1/2} = θ^t − (ηβn/4)∇L_IPO(θ^t; π^s, sg(π^t))`,
/// `θ^{t+1} = θ^t − (ηβn/4)∇L_IPO(θ^t; π^s, π^{t+1/2})`.
///
/// Matches [`egpo_step`] up to a constant shift of the logits.
pub fn egpo_step_via_ipo(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    let start = est.rng.counter();
    let pi = softmax(logits);
    let half = ipo_descent(spec, logits, &pi, eta, est)?;
    let pi_half = softmax(&half);
    let next = ipo_descent(spec, logits, &pi_half, eta, est)?;
    Ok(StepOutcome {
        next_logits: next,
        half_logits: Some(half),
        noise_draws_consumed: est.rng.counter() - start,
    })
}

/// OMD through the online-IPO loss with `μ = sg(π^t)`.
pub fn omd_step_via_ipo(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    let start = est.rng.counter();
    let next = ipo_descent(spec, logits, &softmax(logits), eta, est)?;
    Ok(StepOutcome {
        next_logits: next,
        half_logits: None,
        noise_draws_consumed: est.rng.counter() - start,
    })
}

/// Nash-MD through the online-IPO loss with `μ = sg(π̃^t)`.
pub fn nash_md_step_via_ipo(
    spec: &GameSpec,
    logits: &[f64],
    eta: f64,
    gamma: f64,
    est: &mut VectorEstimator,
) -> Result<StepOutcome> {
    prologue(spec, logits, eta)?;
    check_gamma(gamma)?;
    let start = est.rng.counter();
    let opp = softmax(&mixture_logits(spec, logits, gamma));
    let next = ipo_descent(spec, logits, &opp, eta, est)?;
    Ok(StepOutcome {
        next_logits: next,
        half_logits: None,
        noise_draws_consumed: est.rng.counter() - start,
    })
}
