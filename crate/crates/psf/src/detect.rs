use snapfocus_imaging::{Image, ZStack};

use crate::error::{PsfError, Result};
use crate::fit::{fit_gaussian2d_with, FitConfig, GaussianFit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    /// Threshold as a fraction of the plane's dynamic range above its minimum.
    pub threshold_fraction: f64,
    pub crop_size: usize,
    /// Reject beads whose focused FWHM is more than this many MADs from the
    /// median. `None` disables the rejection.
    pub mad_cutoff: Option<f64>,
    /// Lower bound on the rejection band as a fraction of the median, so
    /// near-identical beads (MAD ≈ 0) are not rejected over rounding noise.
    pub min_band_fraction: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.5,
            crop_size: 30,
            mad_cutoff: Some(3.0),
            min_band_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeadDetection {
    /// Intensity-weighted centroid of the connected component, in pixels.
    pub centroid: (f64, f64),
    /// Top-left corner of the `crop_size`² region used for fitting.
    pub crop_origin: (usize, usize),
    pub crop_size: usize,
    /// Plane the detection was made on (largest standard deviation).
    pub plane_index: usize,
    /// Fit on the detection plane, in crop coordinates.
    pub focus_fit: GaussianFit,
}

impl BeadDetection {
    /// Centroid in crop coordinates.
    pub fn local_centroid(&self) -> (f64, f64) {
        (
            self.centroid.0 - self.crop_origin.0 as f64,
            self.centroid.1 - self.crop_origin.1 as f64,
        )
    }

    /// Fit `crop` starting from this bead's centroid.
    pub fn fit(&self, crop: &Image) -> GaussianFit {
        let cfg = FitConfig {
            center_hint: Some(self.local_centroid()),
            ..Default::default()
        };
        fit_gaussian2d_with(crop, &cfg)
    }

    pub fn crop(&self, image: &Image) -> Result<Image> {
        let (x0, y0) = self.crop_origin;
        Ok(image.crop(x0, y0, self.crop_size, self.crop_size)?)
    }

    /// Fitted centre in full-image coordinates.
    pub fn fitted_center(&self) -> (f64, f64) {
        (
            self.crop_origin.0 as f64 + self.focus_fit.x0,
            self.crop_origin.1 as f64 + self.focus_fit.y0,
        )
    }
}

/// Index of the plane with the largest standard deviation.
pub fn sharpest_plane(stack: &ZStack) -> usize {
    let mut best = 0;
    for (i, p) in stack.planes().iter().enumerate() {
        if p.std_dev() > stack.plane(best).std_dev() {
            best = i;
        }
    }
    best
}

/// 8-connected components of `mask` (row-major), as lists of pixel indices.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut todo = vec![start];
        let mut comp = Vec::new();
        while let Some(p) = todo.pop() {
            comp.push(p);
            let (px, py) = ((p % width) as isize, (p / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (x, y) = (px + dx, py + dy);
                    if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
                        continue;
                    }
                    let q = y as usize * width + x as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        todo.push(q);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Find isolated beads on the sharpest plane: threshold, label 8-connected
/// components, crop around each centroid, fit, and drop crops that leave the
/// image, failed fits, and FWHM outliers.
pub fn detect_beads(stack: &ZStack, cfg: &DetectConfig) -> Result<Vec<BeadDetection>> {
    if stack.is_empty() {
        return Err(PsfError::InvalidInput("empty stack".into()));
    }
    if !(cfg.threshold_fraction > 0.0 && cfg.threshold_fraction < 1.0) || cfg.crop_size < 3 {
        return Err(PsfError::InvalidInput(format!("{cfg:?}")));
    }
    let plane_index = sharpest_plane(stack);
    let plane = stack.plane(plane_index);
    let (lo, hi) = (plane.min(), plane.max());
    if hi <= lo {
        return Err(PsfError::NoBeads);
    }
    let threshold = lo + cfg.threshold_fraction * (hi - lo);
    let mask: Vec<bool> = plane.data().iter().map(|&v| v > threshold).collect();
    let (w, h) = (plane.width(), plane.height());
    let components = connected_components(&mask, w, h);
    if components.is_empty() {
        return Err(PsfError::NoBeads);
    }

    let half = (cfg.crop_size / 2) as isize;
    let mut found = Vec::new();
    for comp in components {
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for &p in &comp {
            let v = plane.data()[p] - lo;
            sw += v;
            sx += v * (p % w) as f64;
            sy += v * (p / w) as f64;
        }
        let centroid = (sx / sw, sy / sw);
        let x0 = centroid.0.round() as isize - half;
        let y0 = centroid.1.round() as isize - half;
        if x0 < 0 || y0 < 0 || x0 as usize + cfg.crop_size > w || y0 as usize + cfg.crop_size > h {
            continue;
        }
        let crop_origin = (x0 as usize, y0 as usize);
        let crop = plane.crop(crop_origin.0, crop_origin.1, cfg.crop_size, cfg.crop_size)?;
        let hint = (centroid.0 - crop_origin.0 as f64, centroid.1 - crop_origin.1 as f64);
        let focus_fit = fit_gaussian2d_with(
            &crop,
            &FitConfig {
                center_hint: Some(hint),
                ..Default::default()
            },
        );
        if !focus_fit.is_usable() {
            continue;
        }
        found.push(BeadDetection {
            centroid,
            crop_origin,
            crop_size: cfg.crop_size,
            plane_index,
            focus_fit,
        });
    }

    if let Some(k) = cfg.mad_cutoff {
        if found.len() >= 3 {
            let mut fwhm: Vec<f64> = found.iter().map(|d| d.focus_fit.lateral_fwhm()).collect();
            let med = median(&mut fwhm);
            let mut dev: Vec<f64> = fwhm.iter().map(|f| (f - med).abs()).collect();
            let mad = median(&mut dev);
            let band = (k * mad).max(cfg.min_band_fraction * med);
            found.retain(|d| (d.focus_fit.lateral_fwhm() - med).abs() <= band);
        }
    }
    if found.is_empty() {
        return Err(PsfError::NoBeads);
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_are_8_connected() {
        #[rustfmt::skip]
        let mask = [
            true, false, false, false,
            false, true, false, true,
            false, false, false, true,
        ];
        let comps = connected_components(&mask, 4, 3);
        assert_eq!(comps, vec![vec![0, 5], vec![7, 11]]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn empty_scene_has_no_beads() {
        let plane = Image::filled(40, 40, 1.0, 0.2).unwrap();
        let stack = ZStack::new(vec![plane], vec![0.0]).unwrap();
        assert!(matches!(detect_beads(&stack, &DetectConfig::default()), Err(PsfError::NoBeads)));
    }
}
