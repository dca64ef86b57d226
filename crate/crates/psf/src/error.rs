use snapfocus_imaging::ImagingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PsfError {
    #[error("no beads found")]
    NoBeads,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("x-z slice leaves the volume: {0}")]
    SliceOutside(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, PsfError>;
