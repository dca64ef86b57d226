//! Full-reference image quality metrics: RMSE, SSIM and multi-scale SSIM.
//!
//! SSIM statistics are Gaussian-weighted local moments evaluated over every
//! valid window position (no padding). The luminance term uses
//! `C1 = (k1 L)^2`, the contrast-structure term `C2 = (k2 L)^2` with
//! `C3 = C2 / 2`, which lets contrast and structure collapse into the single
//! `(2 s_xy + C2) / (s_x^2 + s_y^2 + C2)` factor. `L` is the dynamic range,
//! taken from the reference image unless the caller pins it.

use crate::error::{ImagingError, Result};
use crate::filter::gaussian_kernel_1d;
use crate::image::Image;

/// Standard five-scale exponents.
pub const STANDARD_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq)]
pub struct MsssimConfig {
    /// Number of dyadic scales `M`.
    pub scales: usize,
    /// Exponent per scale; the coarsest entry also weights luminance.
    pub weights: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`; `None` means max - min of the reference.
    pub dynamic_range: Option<f64>,
    /// Odd window side in pixels.
    pub window: usize,
    pub window_sigma: f64,
}

impl Default for MsssimConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            weights: STANDARD_WEIGHTS.to_vec(),
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
            window: 11,
            window_sigma: 1.5,
        }
    }
}

impl MsssimConfig {
    pub fn single_scale() -> Self {
        Self::default().with_scales(1)
    }

    /// Default configuration with `M` capped at what a `width` x `height` image supports.
    pub fn for_size(width: usize, height: usize) -> Self {
        let base = Self::default();
        let m = max_scales(width, height, base.window).clamp(1, 5);
        base.with_scales(m)
    }

    /// Use `scales` levels with the standard weights truncated and renormalized.
    pub fn with_scales(mut self, scales: usize) -> Self {
        let scales = scales.max(1);
        let mut w: Vec<f64> = (0..scales)
            .map(|i| STANDARD_WEIGHTS[i.min(STANDARD_WEIGHTS.len() - 1)])
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        self.scales = scales;
        self.weights = w;
        self
    }

    pub fn with_dynamic_range(mut self, range: f64) -> Self {
        self.dynamic_range = Some(range);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.weights.len() != self.scales {
            return Err(ImagingError::InvalidArgument(format!(
                "{} scales with {} weights",
                self.scales,
                self.weights.len()
            )));
        }
        if self.window % 2 == 0 || self.window == 0 {
            return Err(ImagingError::InvalidArgument(format!(
                "window side {} must be odd",
                self.window
            )));
        }
        Ok(())
    }

    /// `(C1, C2)` for a given dynamic range.
    pub fn constants(&self, range: f64) -> (f64, f64) {
        ((self.k1 * range).powi(2), (self.k2 * range).powi(2))
    }

    pub fn window_taps(&self) -> Vec<f64> {
        gaussian_kernel_1d(self.window_sigma, self.window / 2)
    }
}

/// Largest `M` such that the window still fits the image after `M - 1`
/// 2x2 average-pool reductions.
pub fn max_scales(width: usize, height: usize, window: usize) -> usize {
    let (mut w, mut h, mut m) = (width, height, 0);
    while w >= window && h >= window {
        m += 1;
        w /= 2;
        h /= 2;
    }
    m
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok((sse / a.len() as f64).sqrt())
}

/// Default dynamic range: spread of the reference, or 1 for a flat reference.
pub fn reference_range(reference: &Image) -> f64 {
    let r = reference.max() - reference.min();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
pub fn downsample2(image: &Image) -> Result<Image> {
    let (w, h) = (image.width() / 2, image.height() / 2);
    if w == 0 || h == 0 {
        return Err(ImagingError::InvalidDimensions(format!(
            "{}x{} cannot be pooled",
            image.width(),
            image.height()
        )));
    }
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = image.get(2 * x, 2 * y)
                + image.get(2 * x + 1, 2 * y)
                + image.get(2 * x, 2 * y + 1)
                + image.get(2 * x + 1, 2 * y + 1);
            data.push(0.25 * s);
        }
    }
    Image::new(w, h, 2.0 * image.pixel_pitch(), data)
}

/// Valid-mode separable filtering of a raw buffer.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let ow = w + 1 - k;
    let oh = h + 1 - k;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &tv) in taps.iter().enumerate() {
                acc += tv * tmp[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean luminance term and mean contrast-structure term at one scale, plus
/// the mean of their pointwise product (the SSIM map mean).
struct ScaleStats {
    cs: f64,
    ssim: f64,
}

fn scale_stats(a: &Image, b: &Image, cfg: &MsssimConfig, c1: f64, c2: f64) -> Result<ScaleStats> {
    if a.width() < cfg.window || a.height() < cfg.window {
        return Err(ImagingError::InvalidDimensions(format!(
            "window {} larger than {}x{} image",
            cfg.window,
            a.width(),
            a.height()
        )));
    }
    let taps = cfg.window_taps();
    let (w, h) = (a.width(), a.height());
    let ad = a.data();
    let bd = b.data();
    let aa: Vec<f64> = ad.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bd.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| x * y).collect();
    let (mu_a, ow, oh) = filter_valid(ad, w, h, &taps);
    let (mu_b, _, _) = filter_valid(bd, w, h, &taps);
    let (e_aa, _, _) = filter_valid(&aa, w, h, &taps);
    let (e_bb, _, _) = filter_valid(&bb, w, h, &taps);
    let (e_ab, _, _) = filter_valid(&ab, w, h, &taps);
    let n = (ow * oh) as f64;
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    Ok(ScaleStats {
        cs: cs_sum / n,
        ssim: ssim_sum / n,
    })
}

/// `sign(v) * |v|^p`; keeps negative similarity values meaningful under
/// fractional exponents.
pub fn signed_pow(v: f64, p: f64) -> f64 {
    if p == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(p)
    }
}

/// Single-scale SSIM of `image` against `reference`. Only the window and
/// stabilizer settings of `cfg` are used.
pub fn ssim(image: &Image, reference: &Image, cfg: &MsssimConfig) -> Result<f64> {
    image.ensure_same_shape(reference)?;
    let range = cfg
        .dynamic_range
        .unwrap_or_else(|| reference_range(reference));
    let (c1, c2) = cfg.constants(range);
    Ok(scale_stats(image, reference, cfg, c1, c2)?.ssim)
}

/// Multi-scale SSIM: contrast-structure means at scales `1..M-1`, the full SSIM
/// mean at scale `M`, each raised to its per-scale exponent.
pub fn msssim(image: &Image, reference: &Image, cfg: &MsssimConfig) -> Result<f64> {
    cfg.validate()?;
    image.ensure_same_shape(reference)?;
    if max_scales(image.width(), image.height(), cfg.window) < cfg.scales {
        return Err(ImagingError::InvalidDimensions(format!(
            "{}x{} image too small for {} scales with window {}",
            image.width(),
            image.height(),
            cfg.scales,
            cfg.window
        )));
    }
    let range = cfg
        .dynamic_range
        .unwrap_or_else(|| reference_range(reference));
    let (c1, c2) = cfg.constants(range);
    let mut a = image.clone();
    let mut b = reference.clone();
    let mut value = 1.0;
    for j in 0..cfg.scales {
        let stats = scale_stats(&a, &b, cfg, c1, c2)?;
        if j + 1 == cfg.scales {
            value *= signed_pow(stats.ssim, cfg.weights[j]);
        } else {
            value *= signed_pow(stats.cs, cfg.weights[j]);
            a = downsample2(&a)?;
            b = downsample2(&b)?;
        }
    }
    Ok(value)
}
