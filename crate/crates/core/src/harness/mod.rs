//! Experiment definitions, configuration files and the parallel runner
//! that turns them into CSV tables.

pub mod config;
pub mod experiments;
pub mod runner;

pub use config::{parse_config, ConfigError, ExperimentConfig, IfaceParams, Params, SweepVar};
pub use experiments::{builtin, Builtin, BUILTINS};
pub use runner::{mean_stddev, run_experiment, HarnessError, ResultRow, ResultTable, CSV_HEADER, OPTIMAL};
