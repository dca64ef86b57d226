use snapfocus_autofocus::AutofocusError;
use snapfocus_deconv::DeconvError;
use snapfocus_imaging::ImagingError;
use snapfocus_net::NetError;
use snapfocus_optics::OpticsError;
use snapfocus_psf::PsfError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code: 2 config, 3 data (including I/O), 4 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Data(_) | BenchError::Io(_) => 3,
            BenchError::Numerical(_) => 4,
        }
    }
}

impl From<ImagingError> for BenchError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::InvalidArgument(_) => BenchError::Config(e.to_string()),
            ImagingError::Degenerate(_) => BenchError::Numerical(e.to_string()),
            _ => BenchError::Data(e.to_string()),
        }
    }
}

impl From<OpticsError> for BenchError {
    fn from(e: OpticsError) -> Self {
        BenchError::Config(e.to_string())
    }
}

impl From<AutofocusError> for BenchError {
    fn from(e: AutofocusError) -> Self {
        match e {
            AutofocusError::InvalidConfig(_) | AutofocusError::OutOfRange { .. } => BenchError::Config(e.to_string()),
            AutofocusError::NonFinite { .. } | AutofocusError::Degenerate(_) => BenchError::Numerical(e.to_string()),
            _ => BenchError::Data(e.to_string()),
        }
    }
}

impl From<DeconvError> for BenchError {
    fn from(e: DeconvError) -> Self {
        match e {
            DeconvError::InvalidInput(_) => BenchError::Config(e.to_string()),
            DeconvError::Diverged { .. } => BenchError::Numerical(e.to_string()),
            DeconvError::Imaging(_) => BenchError::Data(e.to_string()),
        }
    }
}

impl From<PsfError> for BenchError {
    fn from(e: PsfError) -> Self {
        match e {
            PsfError::InvalidInput(_) => BenchError::Config(e.to_string()),
            _ => BenchError::Data(e.to_string()),
        }
    }
}

impl From<NetError> for BenchError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Config(_) => BenchError::Config(e.to_string()),
            NetError::NonFinite { .. } | NetError::Domain(_) => BenchError::Numerical(e.to_string()),
            _ => BenchError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
