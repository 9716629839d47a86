use micropack_core::baselines::BaselineError;
use micropack_core::schedule::ScheduleError;
use micropack_core::workload::WorkloadError;
use micropack_core::{PlanError, SolverError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, manifest or plan input.
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A plan or program we produced failed its own checks.
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Cluster(_) | SolverError::Options(_) | SolverError::Cost(_) => CliError::Config(e.to_string()),
            SolverError::Infeasible { .. }
            | SolverError::NoCandidate { .. }
            | SolverError::Partition(_)
            | SolverError::Merge(_) => CliError::Infeasible(e.to_string()),
            SolverError::Oracle(_) | SolverError::Schedule(_) => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        CliError::Infeasible(e.to_string())
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Invariant(e.to_string())
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Invariant(e.to_string())
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        CliError::Config(format!("workload: {e}"))
    }
}
