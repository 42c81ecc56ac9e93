use thiserror::Error;

use crate::geometry::Point2;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the operation's domain (bad arc-length,
    /// empty crack set, point not on the crack, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is rejected before any numerics run (grid too
    /// coarse, malformed scenario, bad radii ordering, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An analysis window does not resolve enough grid nodes.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// A connected component of the grid carries no boundary data, so
    /// the harmonic problem is underdetermined there.
    #[error("underdetermined: component {component} has no boundary node")]
    Underdetermined { component: usize },

    /// The linear solver stopped before reaching its residual target.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },

    /// No escaping curve exists at any clearance level: the point is
    /// enclosed by the crack set.
    #[error("enclosure: no escaping curve from ({:.6}, {:.6})", .point.x, .point.y)]
    Enclosure { point: Point2 },

    /// An analysis block failed (missing data, violated certificate).
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 analysis, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Domain(_) | Error::Resolution(_) | Error::Analysis(_) | Error::Io(_) => 3,
            Error::Enclosure { .. } => 3,
            Error::Underdetermined { .. } | Error::NonConvergence { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
