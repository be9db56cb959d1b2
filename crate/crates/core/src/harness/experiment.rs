use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::harness::config::{ExperimentConfig, InitSource, PolicyClass};
use crate::harness::output::{write_csv, write_json};
use crate::neural::run_neural;
use crate::qre::{qre_solve, EquilibriumCertificate};
use crate::record::RunRecord;
use crate::solvers::run_solver;

/// Records of one experiment, in the order of its algorithm list.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub name: String,
    /// Certificate shared by all tabular runs; neural runs carry their own.
    pub certificate: Option<EquilibriumCertificate>,
    pub records: Vec<RunRecord>,
}

/// Runs every configured algorithm without touching the filesystem.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    execute(config, None)
}

/// Runs the experiment, writing `<dir>/<name>/` as it goes: the resolved
/// config and certificate first, then each run's CSV and JSON (and network
/// checkpoint) as soon as the run ends.
pub fn run_experiment_to(
    config: &ExperimentConfig,
    dir: impl AsRef<Path>,
) -> Result<ExperimentOutcome> {
    execute(config, Some(&dir.as_ref().join(&config.name)))
}

/// Directory an experiment writes to under `dir`.
pub fn experiment_dir(config: &ExperimentConfig, dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(&config.name)
}

fn execute(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let matrix = config.matrix.resolve()?;
    let n = matrix.n();
    if let Some(dir) = out {
        write_json(config, dir.join("config.json"))?;
    }
    let labels = config.run_labels();
    let mut records = Vec::with_capacity(config.algorithms.len());

    let certificate = match config.policy_class {
        PolicyClass::Tabular => {
            let spec = GameSpec::new(matrix.clone(), config.reference.resolve(n)?, config.beta)?;
            let cert = qre_solve(&spec, config.qre_tol, config.qre_max_iters)?;
            if let Some(dir) = out {
                write_json(&cert, dir.join("certificate.json"))?;
            }
            let init = match &config.init {
                InitSource::Ref => spec.ref_logits().to_vec(),
                InitSource::Uniform => vec![0.0; n],
                InitSource::Logits(v) => v.clone(),
            };
            for (run, label) in config.algorithms.iter().zip(&labels) {
                let mut rec = run_solver(&spec, run, &init, &cert).unwrap_or_else(|e| {
                    RunRecord::failed(
                        label.clone(),
                        run.clone(),
                        n,
                        config.beta,
                        Some(cert.clone()),
                        e.to_string(),
                    )
                });
                rec.label = label.clone();
                if let Some(dir) = out {
                    persist(&rec, dir, label)?;
                }
                records.push(rec);
            }
            Some(cert)
        }
        PolicyClass::Neural => {
            for (run, label) in config.algorithms.iter().zip(&labels) {
                let rec = match run_neural(&matrix, config.beta, run, config.qre_tol) {
                    Ok(done) => {
                        let mut rec = done.record;
                        rec.label = label.clone();
                        if let Some(dir) = out {
                            let name = format!("{label}.checkpoint.json");
                            write_json(&done.policy.to_checkpoint(), dir.join(&name))?;
                            rec.checkpoint = Some(name);
                        }
                        rec
                    }
                    Err(e) => RunRecord::failed(
                        label.clone(),
                        run.clone(),
                        n,
                        config.beta,
                        None,
                        e.to_string(),
                    ),
                };
                if let Some(dir) = out {
                    persist(&rec, dir, label)?;
                }
                records.push(rec);
            }
            None
        }
    };
    Ok(ExperimentOutcome {
        name: config.name.clone(),
        certificate,
        records,
    })
}

fn persist(rec: &RunRecord, dir: &Path, label: &str) -> Result<()> {
    write_csv(rec, dir.join(format!("{label}.csv")))?;
    write_json(rec, dir.join(format!("{label}.json")))
}

/// Runs independent experiments on up to `parallelism` threads. Results
/// come back in input order and do not depend on `parallelism`.
pub fn run_sweep(
    configs: &[ExperimentConfig],
    parallelism: usize,
    out: Option<&Path>,
) -> Result<Vec<Result<ExperimentOutcome>>> {
    if parallelism == 0 {
        return Err(Error::config("parallelism must be at least 1"));
    }
    let mut names: Vec<&str> = configs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::config(format!(
            "experiment name {:?} appears more than once in the sweep",
            w[0]
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(|| {
        configs
            .par_iter()
            .map(|c| match out {
                Some(dir) => run_experiment_to(c, dir),
                None => run_experiment(c),
            })
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{parse_config, MatrixSource, RefSource};
    use crate::harness::output::read_csv;
    use crate::solvers::{Algorithm, SolverRunConfig};

    fn config(seed: u64) -> ExperimentConfig {
        let mut c = parse_config(
            r#"{"matrix": {"generate": {"seed": 1, "n": 6}}, "ref": {"generate": {"seed": 1}}, "beta": 0.1,
                "algorithms": [{"algorithm": "egpo", "eta": 0.1, "iters": 40, "metric_every": 10}]}"#,
        )
        .unwrap();
        c.name = format!("e{seed}");
        c.matrix = MatrixSource::Generate { seed, n: 6 };
        c.reference = RefSource::Generate { seed };
        for a in Algorithm::ALL {
            if a != Algorithm::Egpo {
                c.algorithms.push(
                    SolverRunConfig::new(a, 0.1, 40)
                        .with_metric_every(10)
                        .with_seed(seed),
                );
            }
        }
        c
    }

    #[test]
    fn single_step_records_one_step() {
        let mut c = config(1);
        c.algorithms.truncate(1);
        c.algorithms[0].iters = 1;
        let out = run_experiment(&c).unwrap();
        let iters: Vec<usize> = out.records[0].rows.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 1]);
    }

    #[test]
    fn failures_are_flagged_per_run() {
        // an inline matrix escapes the load-time dimension check
        let mut c = config(2);
        c.matrix = MatrixSource::Inline(c.matrix.resolve().unwrap());
        c.init = InitSource::Logits(vec![0.0; 3]);
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.records.len(), 5);
        assert!(out
            .records
            .iter()
            .all(|r| matches!(r.status, crate::record::RunStatus::Failed { .. })));
    }

    #[test]
    fn files_are_written_and_readable() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(3);
        let out = run_experiment_to(&c, dir.path()).unwrap();
        let exp = experiment_dir(&c, dir.path());
        for rec in &out.records {
            let rows = read_csv(exp.join(format!("{}.csv", rec.label))).unwrap();
            assert_eq!(rows, rec.rows);
            assert!(exp.join(format!("{}.json", rec.label)).exists());
        }
        assert!(exp.join("certificate.json").exists() && exp.join("config.json").exists());
    }

    #[test]
    fn sweep_parallelism_does_not_change_results() {
        let configs: Vec<ExperimentConfig> = (0..6).map(config).collect();
        let strip = |v: Vec<Result<ExperimentOutcome>>| -> Vec<Vec<RunRecord>> {
            v.into_iter()
                .map(|o| {
                    o.unwrap()
                        .records
                        .iter()
                        .map(RunRecord::without_timing)
                        .collect()
                })
                .collect()
        };
        let seq = strip(run_sweep(&configs, 1, None).unwrap());
        let par = strip(run_sweep(&configs, 8, None).unwrap());
        assert_eq!(seq.len(), 6);
        assert_eq!(seq.iter().map(Vec::len).sum::<usize>(), 30);
        assert_eq!(seq, par);
        assert!(run_sweep(&[], 4, None).unwrap().is_empty());
        assert!(run_sweep(&configs, 0, None).is_err());
    }
}
