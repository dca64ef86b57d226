use snapfocus_imaging::ImagingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpticsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel {kernel}px exceeds {width}x{height} image")]
    KernelTooLarge {
        kernel: usize,
        width: usize,
        height: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, OpticsError>;
