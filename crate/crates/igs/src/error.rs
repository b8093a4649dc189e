//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the failure class they report so that callers
/// (notably the CLI) can map them onto exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    /// The input document does not conform to the system file schema.
    #[error("schema violation: {0}")]
    Schema(String),
    /// The document parses but describes an inconsistent system.
    #[error("semantic violation: {0}")]
    Semantic(String),
    /// Requested built-in system does not exist.
    #[error("unknown built-in system `{0}`")]
    UnknownBuiltin(String),
    /// Cubical generator parameters violate one of the subrule conditions.
    #[error("cubical constraint violated: {0}")]
    CubicalViolation(String),
    /// A configured size or iteration budget was exceeded.
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    /// Symmetry search hit its node budget; results would be partial.
    #[error("symmetry search budget exceeded: {0}")]
    SearchBudgetExceeded(String),
    /// An iterative solver stopped before reaching its tolerance.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    /// The exponent lies outside the supported range.
    #[error("invalid exponent p = {0}")]
    InvalidExponent(f64),
    /// Two words expected to differ were equal.
    #[error("words are equal")]
    EqualWords,
    /// Word levels do not match.
    #[error("word level mismatch: {0} vs {1}")]
    LevelMismatch(usize, usize),
    /// A vertex set could not be reached; signals a construction bug.
    #[error("target set unreachable: {0}")]
    Disconnected(String),
    /// Instance too large for the brute-force oracle.
    #[error("instance too large for exact oracle: {0}")]
    TooLarge(String),
    /// Primal and dual exponents are not conjugate.
    #[error("exponent mismatch: p = {p}, q = {q}")]
    ExponentMismatch { p: f64, q: f64 },
    /// Operation only defined for the structured system classes.
    #[error("unsupported system class: {0}")]
    UnsupportedClass(String),
    /// A flipping symmetry required by the construction is missing.
    #[error("missing flipping symmetry for type `{0}`")]
    MissingFlippingSymmetry(String),
    /// A proposition hypothesis failed; the message names the clause.
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    /// Boundary typing does not cover every source/target word.
    #[error("boundary typing incomplete: {0}")]
    TypingIncomplete(String),
    /// Search finished without a witness.
    #[error("not found within budget: {0}")]
    NotFound(String),
    /// The system carries no cubical coordinates.
    #[error("system is not cubical")]
    NotCubical,
    /// Too few levels for a rate fit.
    #[error("insufficient levels: need at least {need}, got {got}")]
    InsufficientLevels { need: usize, got: usize },
    /// Flow basis verification failed; message names the condition and pair.
    #[error("flow basis verification failed: {0}")]
    VerificationFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
