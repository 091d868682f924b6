use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid base measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid system parameters: {0}")]
    InvalidSystem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inverse branch {branch} of T_x (symbol {symbol}) did not converge for w = {target}")]
    BranchNotConverged {
        symbol: usize,
        branch: usize,
        target: f64,
    },

    #[error("preimage tree of depth {depth} has {leaves} leaves, over the budget of {budget}")]
    BranchBudgetExceeded {
        depth: usize,
        leaves: u128,
        budget: u128,
    },

    #[error("fiber mismatch: operator expects fiber {expected:#x}, got {found:#x}")]
    FiberMismatch { expected: u64, found: u64 },

    #[error("grid size mismatch: expected {expected}, got {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("zero function: cone embedding denominator vanishes")]
    ZeroFunction,
}

pub type Result<T> = std::result::Result<T, Error>;
