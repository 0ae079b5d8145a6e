use thiserror::Error;

use crate::{attack::AttackError, case::CaseError, defense::DefenseError, lin_solve::LpError, model::ModelError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error aggregating every module's failure modes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] LpError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error("bound ordering violated: lb {lb} > ub {ub}")]
    BoundOrdering { lb: f64, ub: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Case(CaseError::Parse { .. }) | Error::Case(CaseError::MissingTable { .. }) => "parse",
            Error::Case(CaseError::Io { .. }) => "io",
            Error::Case(CaseError::Json(_)) => "parse",
            Error::Case(_) => "validation",
            Error::Model(_) => "model",
            Error::Solver(_) => "solver",
            Error::Attack(_) => "attack",
            Error::Defense(_) => "defense",
            Error::BoundOrdering { .. } => "invariant",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
