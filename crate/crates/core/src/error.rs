use std::fmt;

/// Errors surfaced by the geometry kernel, tree construction and solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid argument or out-of-domain input (non-finite coordinate,
    /// too few points, point outside the model, ...).
    Domain(String),
    /// A geodesic was requested between two identical points.
    DegenerateGeodesic,
    /// A segment endpoint lies on the query hyperplane; the caller must
    /// perturb before asking for a crossing.
    AmbiguousCrossing,
    /// A configurable resource cap was exceeded (shift enumeration count,
    /// portal-subset budget, terminal count).
    ResourceCap(String),
    /// Internal invariant violation; indicates a bug, not bad input.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::DegenerateGeodesic => write!(f, "degenerate geodesic: endpoints coincide"),
            Error::AmbiguousCrossing => {
                write!(f, "ambiguous crossing: endpoint lies on the hyperplane")
            }
            Error::ResourceCap(msg) => write!(f, "resource cap exceeded: {msg}"),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
