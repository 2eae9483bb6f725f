use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value produced at t = {time}")]
    NonFinite { time: f64 },

    #[error("{component} failed membership check (residual {residual:.3e})")]
    Membership { component: String, residual: f64 },

    #[error("composability violated at {context}: mismatch {mismatch:.3e}")]
    Composability { context: String, mismatch: f64 },

    #[error("point at parameter {param} lies outside chart {chart}")]
    ChartViolation { chart: usize, param: f64 },

    #[error("missing derivative for {0} and finite differences are disabled")]
    MissingDerivative(String),

    #[error("unsupported crossed module: {0}")]
    UnsupportedModule(String),

    #[error("no chart covers cell ({a}, {b}) after {refinements} refinements")]
    Uncoverable { a: usize, b: usize, refinements: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error at {path}: {message}")]
    Config { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
