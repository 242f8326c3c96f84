//! Workload generators, reference oracles and the scenario runner behind
//! the `rtdw` command.

pub mod bench;
pub mod generate;
pub mod oracle;
pub mod querygen;
pub mod report;
pub mod scenario;

pub use generate::{generate_workload, GenParams, GeneratorRegistry, WorkloadGenerator};
pub use oracle::{oracle_aggregate, Oracle, OracleAnswer, OracleRegistry};
pub use report::{emit_report, write_report, ClockMode, ReportFormat, RunReport, StrategyReport};
pub use scenario::{execute, run_scenario, ScenarioConfig, ScenarioRun};

use rtdw_core::alerting::AlertError;
use rtdw_core::etl::EtlError;
use rtdw_core::model::ModelError;
use rtdw_core::query::QueryError;
use rtdw_core::storage::StorageError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("unknown oracle `{0}`")]
    UnknownOracle(String),
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("invalid schema: {}", .0.join("; "))]
    InvalidSchema(Vec<String>),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot write {path}: {reason}")]
    UnwritableOutput { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Etl(#[from] EtlError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Alert(#[from] AlertError),
}
