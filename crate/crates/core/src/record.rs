use serde::{Deserialize, Serialize};

use crate::game::{dual_gap, dual_gap_regularized_logits, kl_logits, softmax, GameSpec};
use crate::qre::{fixed_point_residual, EquilibriumCertificate};
use crate::solvers::SolverRunConfig;

/// One row of a convergence trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    /// `KL(π* || π_t)`
    pub kl_star_pi: f64,
    /// `KL(π_t || π*)`
    pub kl_pi_star: f64,
    pub dualgap_beta: f64,
    pub dualgap: f64,
    /// `‖θ_t − θ_ref − Pπ_t/β‖∞`
    pub residual: f64,
}

impl MetricRow {
    pub fn evaluate(spec: &GameSpec, star_logits: &[f64], iter: usize, logits: &[f64]) -> Self {
        let pi = softmax(logits);
        Self {
            iter,
            kl_star_pi: kl_logits(star_logits, logits),
            kl_pi_star: kl_logits(logits, star_logits),
            dualgap_beta: dual_gap_regularized_logits(spec, logits),
            dualgap: dual_gap(spec.matrix(), &pi).unwrap_or(f64::NAN),
            residual: fixed_point_residual(spec, logits),
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.kl_star_pi,
            self.kl_pi_star,
            self.dualgap_beta,
            self.dualgap,
            self.residual,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    /// Metric by its CSV column name.
    pub fn get(&self, metric: &str) -> Option<f64> {
        Some(match metric {
            "kl_star_pi" => self.kl_star_pi,
            "kl_pi_star" => self.kl_pi_star,
            "dualgap_beta" => self.dualgap_beta,
            "dualgap" => self.dualgap,
            "residual" => self.residual,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged { iter: usize, reason: String },
    Failed { message: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// Everything a solver run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub config: SolverRunConfig,
    pub n_arms: usize,
    pub beta: f64,
    /// Absent only when the run failed before an equilibrium was certified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<EquilibriumCertificate>,
    pub rows: Vec<MetricRow>,
    /// Metrics at `θ^{iter+1/2}`, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub half_rows: Vec<MetricRow>,
    pub final_logits: Vec<f64>,
    /// File name of the network checkpoint for neural runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Preference queries issued by the estimator.
    pub comparisons: u64,
    /// Random words drawn by the estimator.
    pub noise_draws: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub status: RunStatus,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn last_row(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// The record with wall-clock time zeroed, for identity comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }

    pub(crate) fn failed(
        label: String,
        config: SolverRunConfig,
        n_arms: usize,
        beta: f64,
        certificate: Option<EquilibriumCertificate>,
        message: String,
    ) -> Self {
        Self {
            label,
            config,
            n_arms,
            beta,
            certificate,
            rows: Vec::new(),
            half_rows: Vec::new(),
            final_logits: Vec::new(),
            checkpoint: None,
            comparisons: 0,
            noise_draws: 0,
            warnings: Vec::new(),
            status: RunStatus::Failed { message },
            wall_clock_seconds: 0.0,
        }
    }
}
