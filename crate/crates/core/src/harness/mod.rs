//! Experiment orchestration: TOML configs, the solve-spectra-varifold-limit pipeline,
//! CSV/JSON artifacts, plot data and the verification suite.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod report;
pub mod verify;

pub use config::ExperimentConfig;
pub use output::emit_plot_data;
pub use pipeline::{run_experiment, run_pipeline, Fault, RunOptions};
pub use report::{Mark, Report, Stage, Status};
pub use verify::{verify_suite, Level, Suite};
