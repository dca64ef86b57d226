//! Per-pixel defocus maps and the spatially varying blur they drive.

use snapfocus_imaging::Image;

use crate::error::{OpticsError, Result};
use crate::psf::{defocus_uniform, PsfModel};

/// Axial defocus, in micrometers, for every pixel of a target image.
#[derive(Debug, Clone, PartialEq)]
pub struct DefocusMap {
    width: usize,
    height: usize,
    dz: Vec<f64>,
}

impl DefocusMap {
    pub fn new(width: usize, height: usize, dz: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || dz.len() != width * height {
            return Err(OpticsError::DimensionMismatch(format!(
                "{width}x{height} map with {} values",
                dz.len()
            )));
        }
        if dz.iter().any(|v| !v.is_finite()) {
            return Err(OpticsError::InvalidParameter("non-finite dz".into()));
        }
        Ok(Self { width, height, dz })
    }

    pub fn uniform(width: usize, height: usize, dz: f64) -> Result<Self> {
        Self::new(width, height, vec![dz; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.dz
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.dz[y * self.width + x]
    }

    pub fn min(&self) -> f64 {
        self.dz.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.dz.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.dz.iter().sum::<f64>() / self.dz.len() as f64
    }

    /// Mean and population std of each row.
    pub fn row_stats(&self) -> Vec<(f64, f64)> {
        self.dz
            .chunks(self.width)
            .map(|row| {
                let n = row.len() as f64;
                let m = row.iter().sum::<f64>() / n;
                let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                (m, v.sqrt())
            })
            .collect()
    }

    /// Offset every value by `dz`, e.g. to move a tilted surface through focus.
    pub fn shifted(&self, dz: f64) -> Self {
        Self {
            dz: self.dz.iter().map(|v| v + dz).collect(),
            ..self.clone()
        }
    }

    pub fn to_image(&self, pixel_pitch: f64) -> Result<Image> {
        Ok(Image::new(self.width, self.height, pixel_pitch, self.dz.clone())?)
    }
}

/// Focal-surface shapes. Coordinates are in micrometers, measured from the
/// image centre (`y_um = (y - (H - 1) / 2) * pitch`, likewise for `x_um`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// `dz = offset`.
    Uniform { offset: f64 },
    /// `dz = tan(angle) * y_um + offset`: a plane tilted about the x axis.
    Tilt { angle_deg: f64, offset: f64 },
    /// `dz = offset + amplitude * (1 - cos(pi * y_um / half_period))`.
    Cylinder {
        offset: f64,
        amplitude: f64,
        half_period: f64,
    },
    /// `dz = offset + amplitude * (1 - r^2 / radius^2)` with `r` clipped to `radius`.
    Sphere {
        offset: f64,
        amplitude: f64,
        radius: f64,
    },
}

pub fn dpm_surface(surface: Surface, width: usize, height: usize, pixel_pitch: f64) -> Result<DefocusMap> {
    if !(pixel_pitch > 0.0) {
        return Err(OpticsError::InvalidParameter(format!("pixel pitch {pixel_pitch}")));
    }
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut dz = Vec::with_capacity(width * height);
    for y in 0..height {
        let y_um = (y as f64 - cy) * pixel_pitch;
        for x in 0..width {
            let x_um = (x as f64 - cx) * pixel_pitch;
            dz.push(match surface {
                Surface::Uniform { offset } => offset,
                Surface::Tilt { angle_deg, offset } => angle_deg.to_radians().tan() * y_um + offset,
                Surface::Cylinder {
                    offset,
                    amplitude,
                    half_period,
                } => offset + amplitude * (1.0 - (std::f64::consts::PI * y_um / half_period).cos()),
                Surface::Sphere {
                    offset,
                    amplitude,
                    radius,
                } => {
                    let r2 = (x_um * x_um + y_um * y_um).min(radius * radius);
                    offset + amplitude * (1.0 - r2 / (radius * radius))
                }
            });
        }
    }
    DefocusMap::new(width, height, dz)
}

/// Layered approximation of spatially varying blur.
///
/// The map's range is split into `n_layers` equally spaced levels, the whole
/// image is blurred at every level, and each output pixel linearly
/// interpolates between the two levels bracketing its own dz. A pixel that
/// sits exactly on a level takes that layer verbatim.
pub fn defocus_spatial(image: &Image, model: &PsfModel, dpm: &DefocusMap, n_layers: usize) -> Result<Image> {
    if dpm.width() != image.width() || dpm.height() != image.height() {
        return Err(OpticsError::DimensionMismatch(format!(
            "map {}x{} vs image {}x{}",
            dpm.width(),
            dpm.height(),
            image.width(),
            image.height()
        )));
    }
    if n_layers < 2 {
        return Err(OpticsError::InvalidParameter(format!("{n_layers} layers")));
    }
    let (lo, hi) = (dpm.min(), dpm.max());
    if lo == hi {
        return defocus_uniform(image, model, lo);
    }
    let step = (hi - lo) / (n_layers - 1) as f64;
    let levels: Vec<f64> = (0..n_layers).map(|k| lo + k as f64 * step).collect();
    let layers = levels
        .iter()
        .map(|&dz| defocus_uniform(image, model, dz))
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; image.len()];
    for (i, (&dz, o)) in dpm.values().iter().zip(out.iter_mut()).enumerate() {
        let t = ((dz - lo) / step).clamp(0.0, (n_layers - 1) as f64);
        let k = (t.floor() as usize).min(n_layers - 2);
        let frac = t - k as f64;
        *o = if dz == levels[k] {
            layers[k].data()[i]
        } else if dz == levels[k + 1] {
            layers[k + 1].data()[i]
        } else {
            (1.0 - frac) * layers[k].data()[i] + frac * layers[k + 1].data()[i]
        };
    }
    Ok(image.with_data(out)?)
}
