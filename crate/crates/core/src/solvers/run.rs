use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::game::{ensure_finite, GameSpec};
use crate::qre::EquilibriumCertificate;
use crate::record::{MetricRow, RunRecord, RunStatus};
use crate::stochastic::{RngStream, VectorEstimator};

use super::config::{Algorithm, GradientForm, SolverRunConfig};
use super::steps::{
    egpo_step, egpo_step_via_ipo, nash_md_pg_step, nash_md_step, nash_md_step_via_ipo, omd_step,
    omd_step_via_ipo, online_ipo2_step, StepOutcome,
};

/// Stream id of the estimator noise within a run's seed.
pub const ESTIMATOR_STREAM: u64 = 1;

/// Any logit beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// A configured update rule bound to one game.
#[derive(Debug, Clone, Copy)]
pub struct Stepper {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub gamma: f64,
    pub form: GradientForm,
}

impl Stepper {
    pub fn from_config(config: &SolverRunConfig, beta: f64) -> Self {
        Self {
            algorithm: config.algorithm,
            eta: config.eta,
            gamma: config.mixture_gamma.resolve(config.eta, beta),
            form: config.gradient_form,
        }
    }

    pub fn step(
        &self,
        spec: &GameSpec,
        logits: &[f64],
        est: &mut VectorEstimator,
    ) -> Result<StepOutcome> {
        let (eta, gamma) = (self.eta, self.gamma);
        match (self.algorithm, self.form) {
            (Algorithm::Egpo, GradientForm::Direct) => egpo_step(spec, logits, eta, est),
            (Algorithm::Egpo, GradientForm::Ipo) => egpo_step_via_ipo(spec, logits, eta, est),
            (Algorithm::Omd, GradientForm::Direct) => omd_step(spec, logits, eta, est),
            (Algorithm::Omd, GradientForm::Ipo) => omd_step_via_ipo(spec, logits, eta, est),
            (Algorithm::OnlineIpo2, _) => online_ipo2_step(spec, logits, eta, est),
            (Algorithm::NashMd, GradientForm::Direct) => {
                nash_md_step(spec, logits, eta, gamma, est)
            }
            (Algorithm::NashMd, GradientForm::Ipo) => {
                nash_md_step_via_ipo(spec, logits, eta, gamma, est)
            }
            (Algorithm::NashMdPg, _) => nash_md_pg_step(spec, logits, eta, gamma, est),
        }
    }
}

/// Runs `config.iters` steps from `initial_logits`, recording metrics at
/// iteration 0, every `metric_every` steps, and at the final step.
///
/// A numeric blow-up ends the run early with a `Diverged` status and the
/// rows collected so far.
pub fn run_solver(
    spec: &GameSpec,
    config: &SolverRunConfig,
    initial_logits: &[f64],
    certificate: &EquilibriumCertificate,
) -> Result<RunRecord> {
    check_len(spec.n(), initial_logits.len())?;
    check_len(spec.n(), certificate.logits.len())?;
    ensure_finite(initial_logits, "initial logit")?;
    let warnings = config.validate(spec.beta())?;
    let started = Instant::now();

    let stepper = Stepper::from_config(config, spec.beta());
    let mut est = VectorEstimator::new(config.mode, RngStream::new(config.seed, ESTIMATOR_STREAM));
    let star = &certificate.logits;
    let mut theta = initial_logits.to_vec();
    let mut rows = vec![MetricRow::evaluate(spec, star, 0, &theta)];
    let mut half_rows = Vec::new();
    let mut status = RunStatus::Ok;
    let mut noise_draws = 0;

    if !rows[0].is_finite() {
        status = RunStatus::Diverged {
            iter: 0,
            reason: "non-finite initial metrics".into(),
        };
    }

    let mut t = 0;
    while status.is_ok() && t < config.iters {
        let recorded_here = t % config.metric_every == 0;
        let out = match stepper.step(spec, &theta, &mut est) {
            Ok(out) => out,
            Err(Error::NonFinite { what, .. }) => {
                status = RunStatus::Diverged {
                    iter: t + 1,
                    reason: what,
                };
                break;
            }
            Err(e) => return Err(e),
        };
        noise_draws += out.noise_draws_consumed;
        if config.record_half && recorded_here {
            if let Some(half) = &out.half_logits {
                half_rows.push(MetricRow::evaluate(spec, star, t, half));
            }
        }
        theta = out.next_logits;
        t += 1;

        if let Some(i) = theta.iter().position(|x| x.abs() > DIVERGENCE_LIMIT) {
            status = RunStatus::Diverged {
                iter: t,
                reason: format!("|logit {i}| = {:e} > 1e9", theta[i].abs()),
            };
            break;
        }
        if t % config.metric_every == 0 || t == config.iters {
            let row = MetricRow::evaluate(spec, star, t, &theta);
            if !row.is_finite() {
                status = RunStatus::Diverged {
                    iter: t,
                    reason: "non-finite metric".into(),
                };
                rows.push(row);
                break;
            }
            rows.push(row);
        }
    }

    Ok(RunRecord {
        label: config.algorithm.name().to_string(),
        config: config.clone(),
        n_arms: spec.n(),
        beta: spec.beta(),
        certificate: Some(certificate.clone()),
        rows,
        half_rows,
        final_logits: theta,
        checkpoint: None,
        comparisons: est.comparisons(),
        noise_draws,
        warnings,
        status,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}
