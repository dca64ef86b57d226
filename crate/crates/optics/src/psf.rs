use snapfocus_imaging::filter::{convolve_separable_replicate, gaussian_kernel_1d};
use snapfocus_imaging::Image;

use crate::error::{OpticsError, Result};

/// Parametric defocus PSF: an isotropic Gaussian whose width grows as
/// `sigma(dz) = sigma0 * sqrt(1 + (s * dz / z_r)^2)`, where `s` is
/// `asymmetry` for `dz > 0` and 1 otherwise.
///
/// With the default `z_r = 0.8 / sqrt(3)` a point source doubles its width at
/// `|dz| = 0.8`, the depth of field of the reference configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfModel {
    /// In-focus blur, pixels.
    pub sigma0: f64,
    /// Defocus scale, micrometers.
    pub z_r: f64,
    /// Kernel half-width in multiples of sigma.
    pub truncation: f64,
    /// Extra growth rate on the positive-defocus side; 1 is symmetric.
    pub asymmetry: f64,
}

pub const DEFAULT_DOF: f64 = 0.8;

impl Default for PsfModel {
    fn default() -> Self {
        Self {
            sigma0: 0.5,
            z_r: DEFAULT_DOF / 3f64.sqrt(),
            truncation: 3.0,
            asymmetry: 1.0,
        }
    }
}

impl PsfModel {
    pub fn new(sigma0: f64, z_r: f64) -> Result<Self> {
        let m = Self {
            sigma0,
            z_r,
            ..Self::default()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_asymmetry(mut self, asymmetry: f64) -> Result<Self> {
        self.asymmetry = asymmetry;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.sigma0) && ok(self.z_r) && ok(self.truncation) && ok(self.asymmetry)) {
            return Err(OpticsError::InvalidParameter(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn sigma(&self, dz: f64) -> f64 {
        let s = if dz > 0.0 { self.asymmetry } else { 1.0 };
        let u = s * dz / self.z_r;
        self.sigma0 * (1.0 + u * u).sqrt()
    }

    /// Kernel half-width in pixels; zero means the kernel degenerates to a delta.
    pub fn radius(&self, dz: f64) -> usize {
        let reach = self.truncation * self.sigma(dz);
        if reach < 0.5 {
            0
        } else {
            reach.ceil() as usize
        }
    }

    /// Normalized 1D taps; the 2D kernel is their outer product.
    pub fn taps(&self, dz: f64) -> Vec<f64> {
        let r = self.radius(dz);
        if r == 0 {
            vec![1.0]
        } else {
            gaussian_kernel_1d(self.sigma(dz), r)
        }
    }

    /// Square kernel of side `2 * ceil(truncation * sigma) + 1`, unit sum.
    pub fn kernel(&self, dz: f64) -> Image {
        let taps = self.taps(dz);
        let n = taps.len();
        Image::from_fn(n, n, 1.0, |x, y| taps[x] * taps[y]).expect("non-empty kernel")
    }
}

/// Free-function form of [`PsfModel::kernel`].
pub fn psf_kernel(model: &PsfModel, dz: f64) -> Image {
    model.kernel(dz)
}

/// Blur with the PSF at `dz`, edge-replicated borders.
pub fn defocus_uniform(image: &Image, model: &PsfModel, dz: f64) -> Result<Image> {
    if !dz.is_finite() {
        return Err(OpticsError::InvalidParameter(format!("dz = {dz}")));
    }
    let taps = model.taps(dz);
    if taps.len() > image.width() || taps.len() > image.height() {
        return Err(OpticsError::KernelTooLarge {
            kernel: taps.len(),
            width: image.width(),
            height: image.height(),
        });
    }
    if taps.len() == 1 {
        return Ok(image.clone());
    }
    Ok(convolve_separable_replicate(image, &taps, &taps)?)
}
