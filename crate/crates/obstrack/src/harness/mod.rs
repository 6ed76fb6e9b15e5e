//! Experiment orchestration: configuration, the benchmark runner, effort
//! records, and replay rendering.

mod bench;
mod config;
mod replay;

pub use bench::{
    run_benchmark, run_one, write_outputs, AlgoSummary, BenchOutput, MetricSummary, RunRecord,
    CSV_HEADER,
};
pub use config::{
    AlgoId, AlgorithmConfig, DepthConfig, ExperimentConfig, RunConfig, ScenarioConfig,
};
pub use replay::{render_svg, replay, ReplayOutput};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validity error: {0}")]
    Validity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Run(#[from] crate::meta::MetaError),
}

impl HarnessError {
    /// Process exit code: 64 for configuration and parse problems, 1 for
    /// everything else. (Exhaustion is an outcome, not an error.)
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Parse(_) => 64,
            _ => 1,
        }
    }
}
