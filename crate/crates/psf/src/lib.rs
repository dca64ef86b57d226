//! PSF analysis on bead stacks: detection on the sharpest plane, 2D Gaussian
//! fits, and lateral/axial FWHM as a function of defocus.

pub mod curve;
pub mod detect;
pub mod error;
pub mod fit;

pub use curve::{axial_fwhm, format_fwhm_csv, fwhm_curve, fwhm_vs_dz, AxialFit, FwhmCurve};
pub use detect::{detect_beads, sharpest_plane, BeadDetection, DetectConfig};
pub use error::{PsfError, Result};
pub use fit::{fit_gaussian2d, fit_gaussian2d_with, fwhm_from_sigma, FitConfig, GaussianFit, FWHM_PER_SIGMA};
