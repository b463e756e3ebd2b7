//! Error type for scenario runs, split by the exit code it maps to.

use hexmesh::interconnect::RouteError;
use hexmesh::multicast::MulticastError;
use hexmesh::powersim::SimError;
use hexmesh::switching::SwitchError;
use hexmesh::topology::TopologyError;
use thiserror::Error;

/// A failed scenario run.
///
/// `Input` covers everything the caller got wrong (unreadable files,
/// malformed scenarios, ports that don't exist); `Solver` covers requests
/// that were well-formed but could not be satisfied on the mesh.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    /// Process exit code: 1 for input errors, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Solver(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o error: {e}"))
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        CliError::Input(format!("topology error: {e}"))
    }
}

impl From<hexmesh::graph::GraphError> for CliError {
    fn from(e: hexmesh::graph::GraphError) -> Self {
        CliError::Input(format!("graph error: {e}"))
    }
}

impl From<RouteError> for CliError {
    fn from(e: RouteError) -> Self {
        match e {
            RouteError::NoRoute { .. } | RouteError::SearchExhausted { .. } => {
                CliError::Solver(format!("routing failed: {e}"))
            }
            other => CliError::Input(format!("routing request invalid: {other}")),
        }
    }
}

impl From<SwitchError> for CliError {
    fn from(e: SwitchError) -> Self {
        match e {
            SwitchError::Unsolved { .. } => CliError::Solver(format!("switch synthesis failed: {e}")),
            SwitchError::Route { .. } => CliError::Solver(format!("switch synthesis failed: {e}")),
            other => CliError::Input(format!("switch request invalid: {other}")),
        }
    }
}

impl From<MulticastError> for CliError {
    fn from(e: MulticastError) -> Self {
        match e {
            MulticastError::TreeConflict { .. } => {
                CliError::Solver(format!("multicast synthesis failed: {e}"))
            }
            MulticastError::Route { ref source, .. } => match source {
                RouteError::NoRoute { .. } | RouteError::SearchExhausted { .. } => {
                    CliError::Solver(format!("multicast synthesis failed: {e}"))
                }
                _ => CliError::Input(format!("multicast request invalid: {e}")),
            },
            other => CliError::Input(format!("multicast request invalid: {other}")),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::LitCycle { .. } => {
                CliError::Solver(format!("simulation rejected the configuration: {e}"))
            }
            other => CliError::Input(format!("simulation request invalid: {other}")),
        }
    }
}
