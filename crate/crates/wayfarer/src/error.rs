//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by world generation, episode synthesis, sessions, and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An environment spec violated its invariants.
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),

    /// A node id that does not exist in the graph being queried.
    #[error("unknown node id {0}")]
    UnknownNode(u32),

    /// No path between two nodes of a (possibly partial) graph.
    #[error("node {to} is unreachable from {from}")]
    Unreachable { from: u32, to: u32 },

    /// Vector dimensions do not line up (policy weights vs. feature map).
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An instruction that does not satisfy the instruction invariants.
    #[error("malformed instruction: {0}")]
    MalformedInstruction(String),

    /// Unknown persona id passed to a style transform.
    #[error("unknown persona id {0}")]
    UnknownPersona(u32),

    /// An episode record whose sequences are inconsistent with each other or
    /// with the ground-truth graph.
    #[error("inconsistent episode record: {0}")]
    InconsistentRecord(String),

    /// A runtime invariant check failed (e.g. a global-graph node that is not
    /// part of the ground truth).
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// The graph cannot satisfy a sampling constraint (hop range, pair count).
    #[error("graph too small: {0}")]
    GraphTooSmall(String),

    /// Not enough episodes for the requested analysis.
    #[error("too few episodes: need at least {required}, got {got}")]
    TooFewEpisodes { required: usize, got: usize },

    /// Expected experiment artifacts are missing from an output directory.
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    /// Invalid experiment or adaptation configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a file path to an io error.
    pub fn io(path: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Attach a file path to a serde_json error.
    pub fn json(path: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }
}
