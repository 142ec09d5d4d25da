use thiserror::Error;

/// Errors raised anywhere in the forward model, the analysis chain or the
/// command-line layer.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid (quadrature order, grid, bracket).
    #[error("configuration error: {0}")]
    Config(String),

    /// A quadrature or iterative computation failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A least-squares fit did not converge or the data are unphysical.
    #[error("fit error: {message} (iterations: {iterations}, residual norm: {residual_norm:.3e})")]
    Fit {
        message: String,
        iterations: usize,
        residual_norm: f64,
    },

    /// Not enough usable points for the requested fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Normalization reference with `max <= min`.
    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    /// Spectroscopy data do not bracket the resonance peak.
    #[error("range error: {0}")]
    Range(String),

    /// The objective has no interior minimum in the search bracket.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// The forward model does not respond to the inferred parameter.
    #[error("insensitive configuration: {0}")]
    Insensitive(String),

    /// Release-curve data carry no temperature information.
    #[error("temperature unbounded: {0}")]
    UnboundedTemperature(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn fit(message: impl Into<String>, iterations: usize, residual_norm: f64) -> Self {
        Error::Fit {
            message: message.into(),
            iterations,
            residual_norm,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
