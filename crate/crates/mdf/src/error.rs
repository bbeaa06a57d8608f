use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the stage that raises them
/// so the CLI can map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid size family: {0}")]
    InvalidFamily(String),

    #[error("battery must contain at least one test")]
    EmptyBattery,

    #[error("battery/family length mismatch: battery has {battery} tests, family has {family} components")]
    LengthMismatch { battery: usize, family: usize },

    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: u64, msg: String },

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("size family rejected: {0}")]
    FamilyRejected(String),

    #[error("optimizer failed to converge after {iterations} iterations (best residual {residual:.3e}, weights {weights:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        weights: Vec<f64>,
    },

    #[error("isotonic repair exceeded budget: component {component} moved by {moved:.3e} (budget {budget:.3e})")]
    RepairBudget {
        component: usize,
        moved: f64,
        budget: f64,
    },

    #[error(
        "monotonicity repair broke the product constraint at alpha = {alpha}: slack {slack:.3e}"
    )]
    RepairInfeasible { alpha: f64, slack: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
