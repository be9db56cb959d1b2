use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{generate_preference_matrix, PreferenceMatrix};
use crate::qre::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::solvers::{
    eta_from_optimizer_lr, theorem_eta, Algorithm, GradientForm, MixtureGamma, SolverRunConfig,
};
use crate::stochastic::{EstimatorMode, RngStream};

/// Stream id of generated reference logits.
pub const REF_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    Generate {
        seed: u64,
        n: usize,
    },
    Inline(PreferenceMatrix),
    /// JSON file in the `{"n", "entries"}` layout, relative to the
    /// working directory.
    Path(PathBuf),
}

impl MatrixSource {
    pub fn resolve(&self) -> Result<PreferenceMatrix> {
        match self {
            MatrixSource::Generate { seed, n } => generate_preference_matrix(*seed, *n),
            MatrixSource::Inline(p) => Ok(p.clone()),
            MatrixSource::Path(path) => crate::harness::read_json(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefSource {
    /// Standard-normal logits from the seeded stream.
    Generate {
        seed: u64,
    },
    Inline(Vec<f64>),
    Uniform,
}

impl RefSource {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            RefSource::Generate { seed } => Ok(reference_logits(*seed, n)),
            RefSource::Inline(v) => {
                crate::error::check_len(n, v.len())?;
                Ok(v.clone())
            }
            RefSource::Uniform => Ok(vec![0.0; n]),
        }
    }
}

/// `n` i.i.d. standard-normal reference logits.
pub fn reference_logits(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = RngStream::new(seed, REF_STREAM);
    (0..n).map(|_| rng.standard_normal()).collect()
}

/// Starting logits of tabular runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    Ref,
    Uniform,
    Logits(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyClass {
    #[default]
    Tabular,
    Neural,
}

/// A validated experiment. Every default is filled in, so serializing it
/// spells the full configuration out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExperimentConfig")]
pub struct ExperimentConfig {
    pub name: String,
    pub matrix: MatrixSource,
    #[serde(rename = "ref")]
    pub reference: RefSource,
    pub beta: f64,
    pub init: InitSource,
    pub algorithms: Vec<SolverRunConfig>,
    pub policy_class: PolicyClass,
    pub output_dir: PathBuf,
    pub qre_tol: f64,
    pub qre_max_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EtaSpec {
    Value(f64),
    AutoTheorem,
    OptimizerLr(f64),
}

impl<'de> Deserialize<'de> for EtaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
            Lr { optimizer_lr: f64 },
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(EtaSpec::Value(x)),
            Raw::Lr { optimizer_lr } => Ok(EtaSpec::OptimizerLr(optimizer_lr)),
            Raw::Str(s) if s == "auto_theorem" => Ok(EtaSpec::AutoTheorem),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "eta must be a number, \"auto_theorem\" or {{\"optimizer_lr\": x}}, got \"{s}\""
            ))),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    algorithm: Algorithm,
    eta: EtaSpec,
    iters: usize,
    #[serde(default)]
    mixture_gamma: MixtureGamma,
    #[serde(default = "exact")]
    mode: EstimatorMode,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    metric_every: usize,
    #[serde(default)]
    record_half: bool,
    #[serde(default)]
    gradient_form: GradientForm,
    #[serde(default)]
    theorem_check: bool,
}

fn exact() -> EstimatorMode {
    EstimatorMode::Exact
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperimentConfig {
    #[serde(default = "default_name")]
    name: String,
    matrix: MatrixSource,
    #[serde(rename = "ref", default = "default_ref")]
    reference: RefSource,
    beta: f64,
    #[serde(default = "default_init")]
    init: InitSource,
    algorithms: Vec<RawAlgorithm>,
    #[serde(default)]
    policy_class: PolicyClass,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default = "default_tol")]
    qre_tol: f64,
    #[serde(default = "default_max_iters")]
    qre_max_iters: usize,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_ref() -> RefSource {
    RefSource::Uniform
}

fn default_init() -> InitSource {
    InitSource::Ref
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl TryFrom<RawExperimentConfig> for ExperimentConfig {
    type Error = String;

    fn try_from(raw: RawExperimentConfig) -> std::result::Result<Self, String> {
        let beta = raw.beta;
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(format!("beta must be positive and finite, got {beta}"));
        }
        let n = match &raw.matrix {
            MatrixSource::Generate { n, .. } => Some(*n),
            MatrixSource::Inline(p) => Some(p.n()),
            MatrixSource::Path(_) => None,
        };
        let mut algorithms = Vec::with_capacity(raw.algorithms.len());
        for a in raw.algorithms {
            let eta = match a.eta {
                EtaSpec::Value(x) => x,
                EtaSpec::AutoTheorem => theorem_eta(beta),
                EtaSpec::OptimizerLr(lr) => match n {
                    Some(n) if n > 0 => eta_from_optimizer_lr(lr, beta, n),
                    _ => {
                        return Err(
                            "eta given as optimizer_lr needs a generated or inline matrix".into(),
                        )
                    }
                },
            };
            algorithms.push(SolverRunConfig {
                algorithm: a.algorithm,
                eta,
                mixture_gamma: a.mixture_gamma,
                mode: a.mode,
                iters: a.iters,
                seed: a.seed,
                metric_every: a.metric_every,
                record_half: a.record_half,
                gradient_form: a.gradient_form,
                theorem_check: a.theorem_check,
            });
        }
        let cfg = ExperimentConfig {
            name: raw.name,
            matrix: raw.matrix,
            reference: raw.reference,
            beta,
            init: raw.init,
            algorithms,
            policy_class: raw.policy_class,
            output_dir: raw.output_dir,
            qre_tol: raw.qre_tol,
            qre_max_iters: raw.qre_max_iters,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// Checks the invariants that do not need the matrix itself.
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::config(
                "algorithms: at least one algorithm is required",
            ));
        }
        if !(self.qre_tol > 0.0) {
            return Err(Error::config(format!(
                "qre_tol must be positive, got {}",
                self.qre_tol
            )));
        }
        if self.qre_max_iters == 0 {
            return Err(Error::config("qre_max_iters must be positive"));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(format!(
                "name must be a plain file name, got {:?}",
                self.name
            )));
        }
        if let MatrixSource::Generate { n, .. } = self.matrix {
            if n < 2 {
                return Err(Error::config(format!(
                    "matrix.generate.n must be at least 2, got {n}"
                )));
            }
            let dims = [
                match &self.reference {
                    RefSource::Inline(v) => Some(("ref", v.len())),
                    _ => None,
                },
                match &self.init {
                    InitSource::Logits(v) => Some(("init", v.len())),
                    _ => None,
                },
            ];
            for (field, len) in dims.into_iter().flatten() {
                if len != n {
                    return Err(Error::config(format!(
                        "{field} has {len} logits but the matrix has {n} arms"
                    )));
                }
            }
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            a.validate(self.beta)
                .map_err(|e| Error::config(format!("algorithms[{i}]: {e}")))?;
            if self.policy_class == PolicyClass::Neural && a.algorithm == Algorithm::NashMdPg {
                return Err(Error::config(format!(
                    "algorithms[{i}]: nash_md_pg is not available for neural policies"
                )));
            }
        }
        Ok(())
    }

    /// Run seeds of every algorithm replaced by `seed`.
    pub fn with_run_seed(mut self, seed: u64) -> Self {
        self.algorithms.iter_mut().for_each(|a| a.seed = seed);
        self
    }

    /// File-name labels of the runs: the algorithm name, suffixed by the
    /// position when an algorithm appears more than once.
    pub fn run_labels(&self) -> Vec<String> {
        let names: Vec<&str> = self.algorithms.iter().map(|a| a.algorithm.name()).collect();
        names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let repeated = names.iter().filter(|m| *m == n).count() > 1;
                let base = if self.policy_class == PolicyClass::Neural {
                    format!("neural_{n}")
                } else {
                    n.to_string()
                };
                if repeated {
                    format!("{base}_{i}")
                } else {
                    base
                }
            })
            .collect()
    }
}

/// Reads and validates an experiment config. Errors carry the file path
/// and, for parse failures, the line and column.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
}

/// Sweep file: a single experiment, a list of experiments, or a base
/// experiment replicated over game seeds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SweepConfig {
    Seeds {
        base: ExperimentConfig,
        seeds: Vec<u64>,
    },
    List(Vec<ExperimentConfig>),
    Single(ExperimentConfig),
}

impl SweepConfig {
    /// The experiments to run. Seed replication re-seeds generated
    /// matrices, generated references and every run seed, and suffixes the
    /// name with the seed.
    pub fn expand(self) -> Vec<ExperimentConfig> {
        match self {
            SweepConfig::Single(c) => vec![c],
            SweepConfig::List(v) => v,
            SweepConfig::Seeds { base, seeds } => seeds
                .into_iter()
                .map(|s| {
                    let mut c = base.clone().with_run_seed(s);
                    c.name = format!("{}_seed{s}", base.name);
                    if let MatrixSource::Generate { n, .. } = c.matrix {
                        c.matrix = MatrixSource::Generate { seed: s, n };
                    }
                    if let RefSource::Generate { .. } = c.reference {
                        c.reference = RefSource::Generate { seed: s };
                    }
                    c
                })
                .collect(),
        }
    }
}

pub fn load_sweep(path: impl AsRef<Path>) -> Result<Vec<ExperimentConfig>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sweep: SweepConfig = serde_json::from_str(&text).map_err(|e| {
        // untagged errors are opaque; retry as a single experiment for a
        // precise message
        match parse_config(&text) {
            Err(inner) => Error::Config(format!("{}: {inner}", path.display())),
            Ok(_) => Error::Config(format!("{}: {e}", path.display())),
        }
    })?;
    Ok(sweep.expand())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "matrix": {"generate": {"seed": 1, "n": 10}},
        "beta": 0.1,
        "algorithms": [{"algorithm": "egpo", "eta": "auto_theorem", "iters": 5}]
    }"#;

    #[test]
    fn defaults_are_resolved() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.algorithms[0].eta, 1.0 / 3.1);
        assert_eq!(c.qre_tol, 1e-12);
        assert_eq!(c.init, InitSource::Ref);
        assert_eq!(c.reference, RefSource::Uniform);
        assert_eq!(c.policy_class, PolicyClass::Tabular);
        assert_eq!(c.algorithms[0].mixture_gamma, MixtureGamma::Value(0.125));
    }

    #[test]
    fn round_trip_is_stable() {
        let c = parse_config(MINIMAL).unwrap();
        let json = serde_json::to_string_pretty(&c).unwrap();
        assert!(json.contains("\"qre_tol\""));
        let back = parse_config(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_beta_is_named() {
        let text = MINIMAL.replace("\"beta\": 0.1,", "");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("beta"), "{err}");
    }

    #[test]
    fn validation_errors_name_the_field() {
        let no_algs =
            r#"{"matrix": {"generate": {"seed": 1, "n": 3}}, "beta": 0.1, "algorithms": []}"#;
        assert!(parse_config(no_algs)
            .unwrap_err()
            .to_string()
            .contains("algorithms"));
        let bad_ref = r#"{"matrix": {"generate": {"seed": 1, "n": 3}}, "ref": {"inline": [0.0]}, "beta": 0.1,
            "algorithms": [{"algorithm": "omd", "eta": 0.1, "iters": 1}]}"#;
        assert!(parse_config(bad_ref)
            .unwrap_err()
            .to_string()
            .contains("ref"));
        let bad_eta = MINIMAL.replace("\"auto_theorem\"", "\"fast\"");
        assert!(parse_config(&bad_eta)
            .unwrap_err()
            .to_string()
            .contains("auto_theorem"));
        let parse = parse_config("{\n  \"beta\": ,\n}").unwrap_err().to_string();
        assert!(parse.contains("line 2"), "{parse}");
    }

    #[test]
    fn optimizer_lr_converts_to_theory_eta() {
        let text = MINIMAL.replace("\"auto_theorem\"", "{\"optimizer_lr\": 0.0002}");
        let c = parse_config(&text.replace("\"beta\": 0.1", "\"beta\": 0.001")).unwrap();
        assert!((c.algorithms[0].eta - 0.08).abs() < 1e-15);
        let from_file = text.replace(
            "{\"generate\": {\"seed\": 1, \"n\": 10}}",
            "{\"path\": \"p.json\"}",
        );
        assert!(parse_config(&from_file)
            .unwrap_err()
            .to_string()
            .contains("optimizer_lr"));
    }

    #[test]
    fn seed_sweep_expands() {
        let text = format!(r#"{{"base": {MINIMAL}, "seeds": [3, 4]}}"#);
        let sweep: SweepConfig = serde_json::from_str(&text).unwrap();
        let v = sweep.expand();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].name, "experiment_seed4");
        assert_eq!(v[1].matrix, MatrixSource::Generate { seed: 4, n: 10 });
        assert_eq!(v[1].algorithms[0].seed, 4);
    }

    #[test]
    fn labels_disambiguate_repeats() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.algorithms.push(c.algorithms[0].clone());
        c.algorithms
            .push(SolverRunConfig::new(Algorithm::Omd, 0.1, 1));
        assert_eq!(c.run_labels(), vec!["egpo_0", "egpo_1", "omd"]);
    }
}
