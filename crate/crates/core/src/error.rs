use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("vector is not unit-norm (|u| = {0})")]
    InvalidUnitVector(f64),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),
    #[error("too few slots: {needed} required, {got} given (must be a power of two)")]
    TooFewSlots { needed: usize, got: usize },
    #[error("zero noise variance gives infinite Fisher information")]
    InfiniteInformation,
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("delay estimation needs more than one subcarrier")]
    NeedsWideband,
    #[error("spatial-frequency estimation needs at least {needed} probing profiles, got {got}")]
    NeedsProbes { needed: usize, got: usize },
    #[error("no intersection between AOD ray and TDOA hyperbola")]
    NoIntersection,
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error("solver did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("spatial frequency ({0:.4}, {1:.4}) is not reachable by any departure direction")]
    InfeasibleFrequency(f64, f64),
}
