use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario tree: {}", .0.join("; "))]
    InvalidTree(Vec<String>),

    #[error("depth {depth} out of range (tree has depths 0..={max})")]
    DepthOutOfRange { depth: usize, max: usize },

    #[error("objects live on different scenario trees")]
    TreeMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("stopping time is not measurable at node {node}")]
    NotMeasurable { node: usize },

    #[error("strategy bound violated at node {node}: |K| = {value} > {bound}")]
    StrategyBound { node: usize, value: f64, bound: f64 },

    #[error("size guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("concatenation rejected at node {node}: {reason}")]
    Concatenation { node: usize, reason: String },

    #[error("no drawdown to exploit: the set {{Y_t <= {threshold}}} is empty")]
    EmptyDrawdown { threshold: f64 },

    #[error("not admissible: process reaches {min} below the floor {floor} at node {node}")]
    NotAdmissible { node: usize, min: f64, floor: f64 },

    #[error("LP solver failure: {0}")]
    Solver(String),

    #[error("invalid market: {path}: {message}")]
    Market { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
