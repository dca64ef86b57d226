//! Image container, RF32/manifest I/O, geometric transforms and the image
//! quality and sharpness measures used across the workspace.

pub mod error;
pub mod filter;
pub mod image;
pub mod io;
pub mod metrics;
pub mod register;
pub mod sharpness;
pub mod transform;

pub use error::{ImagingError, Result};
pub use image::{Image, ZStack};
pub use metrics::{msssim, rmse, ssim, MsssimConfig};
pub use sharpness::{row_sharpness_profile, sobel_sharpness, RowFit, SharpnessProfile};
pub use transform::{augment8, crop_tiles, mip, normalize_zscore, ZScore};
