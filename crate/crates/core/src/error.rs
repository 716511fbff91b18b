use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum AfcError {
    /// A parameter is non-finite or outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A grid does not resolve the features it is asked to represent.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// A query or window falls outside the sampled domain.
    #[error("range error: {0}")]
    Range(String),

    /// Explicit time stepping went unstable.
    #[error("numerical step error: {0}")]
    NumericalStep(String),

    /// A computation produced non-finite values or failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Not enough structure in the data to determine the fit.
    #[error("fit degeneracy: {0}")]
    FitDegeneracy(String),

    /// Electric pulses cannot be placed in the requested windows.
    #[error("scheduling error: {0}")]
    Scheduling(String),

    /// Mutually inconsistent configuration.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A trace is not normalized to one photon per unit input energy.
    #[error("normalization error: {0}")]
    Normalization(String),

    /// A ratio statistic with a vanishing denominator.
    #[error("undefined statistic: {0}")]
    Undefined(String),

    /// The requested efficiency exceeds what the input statistics can supply.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type AfcResult<T> = Result<T, AfcError>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> AfcResult<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(AfcError::InvalidParameter(format!("{name} must be finite, got {value}")))
    }
}
