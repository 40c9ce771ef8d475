use thiserror::Error;

/// Errors raised by the two-speed model laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("position x = {x} lies outside [0, 1]")]
    Domain { x: f64 },

    #[error("invalid field specification: {0}")]
    InvalidField(String),

    #[error("invalid cross-section: sigma({x}) = {value} is negative")]
    InvalidCrossSection { x: f64, value: f64 },

    #[error("degenerate velocity field: |b{component}({x})| = {value:e} is below the floor")]
    Degenerate { component: usize, x: f64, value: f64 },

    #[error(
        "steady state is not unique: kernel of Phi(1) - I has dimension {dimension} \
         (singular values {sigma_max:e}, {sigma_min:e}; tolerance {tolerance:e})"
    )]
    NonUniqueSteady {
        dimension: usize,
        sigma_max: f64,
        sigma_min: f64,
        tolerance: f64,
    },

    #[error("positivity failure: entry {index} has value {value:e}")]
    Positivity { index: usize, value: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("defective generator: {0}")]
    DefectiveGenerator(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence: non-finite state at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("insufficient data: {usable} usable points, at least {required} required")]
    InsufficientData { usable: usize, required: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix of size {size} exceeds the dense solver cap {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from user input rather than from a numerical computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidField(_) | Error::Domain { .. } | Error::Unsupported(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
