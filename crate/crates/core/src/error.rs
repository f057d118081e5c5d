use thiserror::Error;

/// Errors raised by the samplers, solvers and verification harnesses.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown model `{name}`; valid names: {}", valid.join(", "))]
    UnknownModel { name: String, valid: Vec<String> },

    #[error("unknown parameter `{param}` for model `{model}`; accepted: {}", accepted.join(", "))]
    UnknownParameter {
        model: String,
        param: String,
        accepted: Vec<String>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("coefficient `{coefficient}` is not finite at {input}")]
    NonFiniteCoefficient { coefficient: String, input: String },

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("state blew up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("regression basis: {0}")]
    Basis(String),

    #[error("numerical failure at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    #[error("time step {dt} exceeds the stability bound {max_dt}")]
    Stability { dt: f64, max_dt: f64 },

    #[error("test function produced a non-finite weighted sample: {0}")]
    TestFunction(String),

    #[error("fit: {0}")]
    Fit(String),

    #[error("i/o on `{path}`: {detail}")]
    Io { path: String, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
