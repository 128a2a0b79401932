use thiserror::Error;

/// Error variants shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// The density does not carry enough mass for the requested quantity.
    #[error("density mass {mass} is too small (need > {needed})")]
    MassTooSmall { mass: f64, needed: f64 },

    /// A query parameter lies outside its admissible range.
    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    /// Operation requires an integer total mass.
    #[error("density mass {0} is not an integer within tolerance")]
    NonIntegerMass(f64),

    /// Operation requires a non-integer total mass.
    #[error("density mass {0} is an integer; use the canonical value directly")]
    IntegerMass(f64),

    /// Ball-cover parameter must satisfy 0 < epsilon < 1/9.
    #[error("epsilon {0} outside (0, 1/9)")]
    EpsilonOutOfRange(f64),

    /// Post-hoc cover validation failed; indicates an algorithmic bug.
    #[error("cover invariant violated: {0}")]
    CoverInvariantViolated(String),

    /// A Besicovitch block captured more than unit mass.
    #[error("cube mass {0} exceeds one; refine the grid")]
    CubeMassExceedsOne(f64),

    /// Mixture factors overlap and the exact expansion exceeds the size cap.
    #[error("mixture supports overlap: {0}")]
    SupportOverlap(String),

    /// Grand-canonical truncation leaves too much probability mass.
    #[error("sector truncation too severe: remainder {remainder} at n_max {n_max}")]
    TruncationTooSevere { remainder: f64, n_max: usize },

    /// Density exceeds the hard-core packing threshold.
    #[error("density {max} exceeds the packing threshold {threshold}")]
    DensityExceedsPacking { max: f64, threshold: f64 },

    /// A bound's hypotheses are not met for the given inputs.
    #[error("bound not applicable: {0}")]
    NotApplicable(String),

    /// Hard-rod window mass reaches one; the Percus formula degenerates.
    #[error("density not representable: {0}")]
    NotRepresentable(String),

    /// Problem size exceeds the desk-scale caps.
    #[error("problem too large: {0}")]
    TooLarge(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver did not converge: {0}")]
    NotConverged(String),

    /// The tail exponent does not make the tail integrable.
    #[error("tail exponent s = {s} is not integrable in dimension {d}")]
    TailNotIntegrable { s: f64, d: usize },

    /// Transport feasibility failed on the grid (refine and retry).
    #[error("no admissible transport plan on the grid: {0}")]
    Infeasible(String),

    /// Malformed input file or configuration.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
