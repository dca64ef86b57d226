use snapfocus_imaging::ImagingError;
use snapfocus_optics::OpticsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutofocusError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("z = {z} outside stage range [{min}, {max}]")]
    OutOfRange { z: f64, min: f64, max: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite focus value at z = {z} after {} evaluations", trace.len())]
    NonFinite { z: f64, trace: Vec<(f64, f64)> },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, AutofocusError>;
