use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes: `Precondition`
/// exits 3, `Exhausted` exits 2, everything else exits 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller asked for something the parameters rule out (p not an odd prime
    /// in range, d not dividing (p+1)/2, rank mismatch, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A mathematically meaningless request (inverse of zero, roots of the
    /// zero polynomial, order of a non-element).
    #[error("math error: {0}")]
    Math(String),

    /// A cap was hit: group too large for dense enumeration, BFS frontier over
    /// budget, tuple budget exceeded. The computation is skippable, not wrong.
    #[error("resource limit: {0}")]
    Resource(String),

    /// A candidate pair (H1, u(x)H1u(-x)) has non-trivial intersection; the
    /// witness is a shared non-identity element.
    #[error("pair rejected: intersection contains {witness:?}")]
    PairRejected { witness: crate::group::ProjMat },

    /// Search ran out of candidates. Carries the census of sieved-out x.
    #[error("search exhausted: no valid x in F_{p} ({bad_count} excluded)")]
    Exhausted { p: u64, bad_count: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
