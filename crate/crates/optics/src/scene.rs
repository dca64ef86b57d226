//! Seeded synthetic specimens standing in for bead slides and tissue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use snapfocus_imaging::filter::{convolve_separable_replicate, gaussian_kernel_1d};
use snapfocus_imaging::Image;

use crate::error::{OpticsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneKind {
    /// Gaussian spots at sub-pixel positions on a flat background.
    Beads {
        count: usize,
        /// Spot sigma, pixels.
        sigma: f64,
        /// Minimum centre-to-centre distance, pixels.
        min_separation: f64,
        /// Minimum distance of a centre from the image border, pixels.
        margin: f64,
    },
    /// Gaussian-filtered white noise, rescaled to the intensity range.
    Texture {
        /// Filter sigma, pixels.
        correlation_length: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub background: f64,
    /// Bead amplitude, or texture span above the background.
    pub peak: f64,
}

impl SceneSpec {
    pub fn beads(count: usize, width: usize, height: usize, seed: u64) -> Self {
        Self {
            kind: SceneKind::Beads {
                count,
                sigma: 1.0,
                min_separation: 8.0,
                margin: 4.0,
            },
            seed,
            width,
            height,
            pixel_pitch: 0.325,
            background: 0.0,
            peak: 1.0,
        }
    }

    pub fn texture(correlation_length: f64, width: usize, height: usize, seed: u64) -> Self {
        Self {
            kind: SceneKind::Texture { correlation_length },
            seed,
            width,
            height,
            pixel_pitch: 0.325,
            background: 0.1,
            peak: 1.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Bead centres the scene generator places for `spec`; empty for textures.
pub fn bead_positions(spec: &SceneSpec) -> Result<Vec<(f64, f64)>> {
    let SceneKind::Beads {
        count,
        min_separation,
        margin,
        ..
    } = spec.kind
    else {
        return Ok(Vec::new());
    };
    let (w, h) = (spec.width as f64, spec.height as f64);
    if 2.0 * margin >= w - 1.0 || 2.0 * margin >= h - 1.0 {
        return Err(OpticsError::InvalidParameter(format!(
            "margin {margin} leaves no room in {}x{}",
            spec.width, spec.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while placed.len() < count {
        attempts += 1;
        if attempts > 10_000 * count.max(1) {
            return Err(OpticsError::InvalidParameter(format!(
                "cannot place {count} beads {min_separation}px apart in {}x{}",
                spec.width, spec.height
            )));
        }
        let x = rng.random_range(margin..w - 1.0 - margin);
        let y = rng.random_range(margin..h - 1.0 - margin);
        let clear = placed
            .iter()
            .all(|&(px, py)| (px - x).hypot(py - y) >= min_separation);
        if clear {
            placed.push((x, y));
        }
    }
    Ok(placed)
}

pub fn synth_scene(spec: &SceneSpec) -> Result<Image> {
    if spec.width == 0 || spec.height == 0 {
        return Err(OpticsError::InvalidParameter("empty scene".into()));
    }
    match spec.kind {
        SceneKind::Beads { sigma, .. } => {
            if !(sigma > 0.0) {
                return Err(OpticsError::InvalidParameter(format!("bead sigma {sigma}")));
            }
            let beads = bead_positions(spec)?;
            let reach = (5.0 * sigma).ceil() as isize;
            let mut img = Image::filled(spec.width, spec.height, spec.pixel_pitch, spec.background)?;
            for &(bx, by) in &beads {
                let (cx, cy) = (bx.round() as isize, by.round() as isize);
                for y in (cy - reach).max(0)..=(cy + reach).min(spec.height as isize - 1) {
                    for x in (cx - reach).max(0)..=(cx + reach).min(spec.width as isize - 1) {
                        let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                        let v = img.get(x as usize, y as usize)
                            + spec.peak * (-d2 / (2.0 * sigma * sigma)).exp();
                        img.set(x as usize, y as usize, v);
                    }
                }
            }
            Ok(img)
        }
        SceneKind::Texture { correlation_length } => {
            if !(correlation_length > 0.0) {
                return Err(OpticsError::InvalidParameter(format!(
                    "correlation length {correlation_length}"
                )));
            }
            let radius = (3.0 * correlation_length).ceil() as usize;
            let (pw, ph) = (spec.width + 2 * radius, spec.height + 2 * radius);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let raw = Image::from_fn(pw, ph, spec.pixel_pitch, |_, _| rng.sample::<f64, _>(StandardNormal))?;
            let taps = gaussian_kernel_1d(correlation_length, radius);
            let smooth = convolve_separable_replicate(&raw, &taps, &taps)?
                .crop(radius, radius, spec.width, spec.height)?;
            let (lo, hi) = (smooth.min(), smooth.max());
            let span = if hi > lo { hi - lo } else { 1.0 };
            Ok(smooth.map(|v| spec.background + spec.peak * (v - lo) / span))
        }
    }
}
