//! Experiment harness: scenario generation, baselines, metrics and summaries.

pub mod baseline;
pub mod experiment;
pub mod generate;
pub mod metrics;
pub mod summary;

pub use baseline::{run_algorithm, run_baseline, Algorithm};
pub use experiment::{run_experiment, write_atomic, ExperimentOutcome, ExperimentSpec, ScenarioSource};
pub use generate::{generate_scenario, BaseSystem, GeneratorParams, Heterogeneity};
pub use metrics::{metrics_rows, read_rows, write_rows, CommRow, MetricsRow};
pub use summary::{summarize, Summary};
