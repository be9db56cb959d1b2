use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::EstimatorMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Egpo,
    /// Online mirror descent, a.k.a. Online IPO 1.
    Omd,
    #[serde(rename = "online_ipo2")]
    OnlineIpo2,
    NashMd,
    NashMdPg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Egpo,
        Algorithm::Omd,
        Algorithm::OnlineIpo2,
        Algorithm::NashMd,
        Algorithm::NashMdPg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Egpo => "egpo",
            Algorithm::Omd => "omd",
            Algorithm::OnlineIpo2 => "online_ipo2",
            Algorithm::NashMd => "nash_md",
            Algorithm::NashMdPg => "nash_md_pg",
        }
    }

    pub fn uses_mixture(self) -> bool {
        matches!(self, Algorithm::NashMd | Algorithm::NashMdPg)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Geometric-mixture coefficient of the Nash-MD family; `auto` means `η·β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixtureGamma {
    Value(f64),
    Auto,
}

impl Serialize for MixtureGamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MixtureGamma::Value(g) => s.serialize_f64(*g),
            MixtureGamma::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for MixtureGamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(g) => Ok(MixtureGamma::Value(g)),
            Raw::Str(s) if s == "auto" => Ok(MixtureGamma::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "mixture_gamma must be a number or \"auto\", got \"{s}\""
            ))),
        }
    }
}

impl MixtureGamma {
    /// Mixture coefficient of the reference experiments.
    pub const EXPERIMENT_DEFAULT: MixtureGamma = MixtureGamma::Value(0.125);

    pub fn resolve(self, eta: f64, beta: f64) -> f64 {
        match self {
            MixtureGamma::Value(g) => g,
            MixtureGamma::Auto => eta * beta,
        }
    }
}

impl Default for MixtureGamma {
    fn default() -> Self {
        Self::EXPERIMENT_DEFAULT
    }
}

/// Whether EGPO, OMD and Nash-MD are applied in logit form or through the
/// equivalent online-IPO gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientForm {
    #[default]
    Direct,
    Ipo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRunConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    #[serde(default)]
    pub mixture_gamma: MixtureGamma,
    #[serde(default = "exact_mode")]
    pub mode: EstimatorMode,
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub metric_every: usize,
    /// Also record metrics at the EGPO half-iterates.
    #[serde(default)]
    pub record_half: bool,
    #[serde(default)]
    pub gradient_form: GradientForm,
    /// Reject step sizes above `1/(β+3)` instead of warning.
    #[serde(default)]
    pub theorem_check: bool,
}

fn exact_mode() -> EstimatorMode {
    EstimatorMode::Exact
}

fn one() -> usize {
    1
}

impl SolverRunConfig {
    pub fn new(algorithm: Algorithm, eta: f64, iters: usize) -> Self {
        Self {
            algorithm,
            eta,
            mixture_gamma: MixtureGamma::default(),
            mode: EstimatorMode::Exact,
            iters,
            seed: 0,
            metric_every: 1,
            record_half: false,
            gradient_form: GradientForm::Direct,
            theorem_check: false,
        }
    }

    pub fn with_mode(mut self, mode: EstimatorMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_metric_every(mut self, every: usize) -> Self {
        self.metric_every = every;
        self
    }

    pub fn with_gamma(mut self, gamma: MixtureGamma) -> Self {
        self.mixture_gamma = gamma;
        self
    }

    pub fn with_half_metrics(mut self) -> Self {
        self.record_half = true;
        self
    }

    pub fn with_gradient_form(mut self, form: GradientForm) -> Self {
        self.gradient_form = form;
        self
    }

    /// Checks invariants; returns warnings for accepted-but-unusual settings.
    pub fn validate(&self, beta: f64) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.metric_every == 0 {
            return Err(Error::config("metric_every must be positive"));
        }
        self.mode.validate()?;
        if let MixtureGamma::Value(g) = self.mixture_gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::config(format!(
                    "mixture_gamma must be in [0,1], got {g}"
                )));
            }
        }
        let gamma = self.mixture_gamma.resolve(self.eta, beta);
        if self.algorithm.uses_mixture() && !(0.0..=1.0).contains(&gamma) {
            return Err(Error::config(format!(
                "resolved mixture_gamma {gamma} is outside [0,1]"
            )));
        }
        let limit = theorem_eta(beta);
        if self.eta > limit {
            let msg = format!("eta = {} exceeds 1/(beta+3) = {limit}", self.eta);
            if self.theorem_check {
                return Err(Error::config(msg));
            }
            warnings.push(msg);
        }
        Ok(warnings)
    }
}

/// Largest step size covered by the linear-rate guarantee, `1/(β+3)`.
pub fn theorem_eta(beta: f64) -> f64 {
    1.0 / (beta + 3.0)
}
