//! Experiment configuration, problem builders and drivers for the
//! `mmshape` command-line tool.

pub mod config;
pub mod drivers;
pub mod problems;

pub use config::{parse_config, parse_config_str, ConfigError, ProblemKind, RunConfig};
pub use drivers::{
    cmd_convergence, cmd_optimize, cmd_solve, cmd_sweep, cmd_taylor, RunArtifacts,
};
