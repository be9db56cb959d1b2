use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use nashgame::harness::{
    experiment_dir, load_config, load_sweep, read_csv, read_json, run_checks, run_experiment_to,
    run_sweep, write_json, write_plot, ExperimentConfig, ExperimentOutcome, PlotSeries,
    DEFAULT_FLOOR,
};
use nashgame::{
    generate_preference_matrix, qre_solve, Error, GameSpec, PreferenceMatrix, RunStatus,
};

const SEED_ENV: &str = "NASHGAME_SEED";

#[derive(Parser)]
#[command(
    name = "nashgame",
    version,
    about = "Equilibria of regularized preference games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a seeded preference matrix
    GenMatrix {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify the regularized equilibrium of a game
    Qre {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        beta: f64,
        /// `uniform`, `seed:<u64>` for standard-normal logits, or a JSON array file
        #[arg(long = "ref", default_value = "uniform")]
        reference: String,
        #[arg(long, default_value_t = nashgame::qre::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = nashgame::qre::DEFAULT_MAX_ITERS)]
        max_iters: usize,
        /// Defaults to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run many experiments in parallel
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Log-scale SVG of one metric from trajectory CSVs
    Plot {
        #[arg(long, default_value = "dualgap_beta")]
        metric: String,
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FLOOR)]
        floor: f64,
    },
    /// Run the invariant suite
    Check,
}

enum Failure {
    Validation(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenMatrix { seed, n, out } => gen_matrix(seed, n, &out),
        Command::Qre {
            matrix,
            beta,
            reference,
            tol,
            max_iters,
            out,
        } => qre(&matrix, beta, &reference, tol, max_iters, out.as_deref()),
        Command::Run { config, out_dir } => run(&config, out_dir.as_deref()),
        Command::Sweep {
            config,
            parallelism,
            out_dir,
        } => sweep(&config, parallelism, out_dir.as_deref()),
        Command::Plot {
            metric,
            inputs,
            out,
            floor,
        } => plot(&metric, &inputs, &out, floor),
        Command::Check => check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn gen_matrix(seed: u64, n: usize, out: &Path) -> CmdResult {
    let p = generate_preference_matrix(seed, n)?;
    write_json(&p, out)?;
    println!("wrote {n}x{n} matrix to {}", out.display());
    Ok(())
}

fn parse_ref(spec: &str, n: usize) -> Result<Vec<f64>, Failure> {
    if spec == "uniform" {
        return Ok(vec![0.0; n]);
    }
    if let Some(seed) = spec.strip_prefix("seed:") {
        let seed = seed
            .parse()
            .map_err(|_| Failure::Validation(format!("--ref: bad seed {seed:?}")))?;
        return Ok(nashgame::harness::reference_logits(seed, n));
    }
    Ok(read_json::<Vec<f64>>(spec)?)
}

fn qre(
    matrix: &Path,
    beta: f64,
    reference: &str,
    tol: f64,
    max_iters: usize,
    out: Option<&Path>,
) -> CmdResult {
    let p: PreferenceMatrix = read_json(matrix)?;
    let r = parse_ref(reference, p.n())?;
    let spec = GameSpec::new(p, r, beta)?;
    let cert = qre_solve(&spec, tol, max_iters)?;
    let doc = json!({
        "logits": cert.logits,
        "residual_inf_norm": cert.residual_inf_norm,
        "tolerance": cert.tolerance,
        "probs": cert.probs(),
    });
    match out {
        Some(path) => {
            write_json(&doc, path)?;
            println!(
                "residual {:e}; wrote {}",
                cert.residual_inf_norm,
                path.display()
            );
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&doc).expect("serializable")
        ),
    }
    Ok(())
}

fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            Failure::Validation(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))
        }),
        Err(_) => Ok(None),
    }
}

fn apply_seed(cfg: ExperimentConfig, seed: Option<u64>) -> ExperimentConfig {
    match seed {
        Some(s) => cfg.with_run_seed(s),
        None => cfg,
    }
}

/// Prints one line per run; numeric if any run diverged.
fn report(outcome: &ExperimentOutcome, dir: &Path) -> CmdResult {
    let mut diverged = Vec::new();
    for rec in &outcome.records {
        let last = rec
            .last_row()
            .map(|r| format!("{:.3e}", r.dualgap_beta))
            .unwrap_or_else(|| "-".into());
        let status = match &rec.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Diverged { iter, reason } => {
                diverged.push(rec.label.clone());
                format!("diverged at {iter}: {reason}")
            }
            RunStatus::Failed { message } => format!("failed: {message}"),
        };
        for w in &rec.warnings {
            eprintln!("warning [{}/{}]: {w}", outcome.name, rec.label);
        }
        println!(
            "{}/{}: {status}; final dualgap_beta {last}",
            outcome.name, rec.label
        );
    }
    println!("wrote {}", dir.display());
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "{}: runs diverged: {}",
            outcome.name,
            diverged.join(", ")
        )))
    }
}

fn run(config: &Path, out_dir: Option<&Path>) -> CmdResult {
    let cfg = apply_seed(load_config(config)?, seed_override()?);
    let root = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.clone());
    let outcome = run_experiment_to(&cfg, &root)?;
    report(&outcome, &experiment_dir(&cfg, &root))
}

fn sweep(config: &Path, parallelism: usize, out_dir: Option<&Path>) -> CmdResult {
    let seed = seed_override()?;
    let configs: Vec<ExperimentConfig> = load_sweep(config)?
        .into_iter()
        .map(|c| apply_seed(c, seed))
        .collect();
    if configs.is_empty() {
        println!("nothing to run");
        return Ok(());
    }
    let root = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| configs[0].output_dir.clone());
    let results = run_sweep(&configs, parallelism, Some(&root))?;
    let mut first_err = None;
    for (cfg, res) in configs.iter().zip(results) {
        let r = match res {
            Ok(outcome) => report(&outcome, &experiment_dir(cfg, &root)),
            Err(e) => {
                eprintln!("{}: {e}", cfg.name);
                Err(Failure::from(e))
            }
        };
        if let Err(f) = r {
            first_err.get_or_insert(f);
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn plot(metric: &str, inputs: &[PathBuf], out: &Path, floor: f64) -> CmdResult {
    let mut series = Vec::with_capacity(inputs.len());
    for path in inputs {
        let rows = read_csv(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        series.push(PlotSeries::from_rows(label, &rows, metric)?);
    }
    write_plot(&series, metric, floor, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn check() -> CmdResult {
    let results = run_checks();
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    println!(
        "{}/{} properties hold",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("{failed} properties violated")))
    }
}
