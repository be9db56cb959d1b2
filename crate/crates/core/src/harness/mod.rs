//! Experiment configs, sweeps, persistence and plots.

mod check;
mod config;
mod experiment;
mod output;
mod plot;

pub use check::{run_checks, CheckResult};
pub use config::{
    load_config, load_sweep, parse_config, reference_logits, ExperimentConfig, InitSource,
    MatrixSource, PolicyClass, RefSource, SweepConfig, REF_STREAM,
};
pub use experiment::{
    experiment_dir, run_experiment, run_experiment_to, run_sweep, ExperimentOutcome,
};
pub use output::{csv_string, parse_csv, read_csv, read_json, write_csv, write_json, CSV_HEADER};
pub use plot::{render_plot, write_plot, PlotSeries, DEFAULT_FLOOR};
