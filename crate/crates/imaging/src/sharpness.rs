use crate::error::{ImagingError, Result};
use crate::image::Image;

/// Sobel gradient magnitude `sqrt(Ix^2 + Iy^2)` with edge replication.
pub fn sobel_sharpness(image: &Image) -> Result<Image> {
    if image.width() < 3 || image.height() < 3 {
        return Err(ImagingError::InvalidDimensions(format!(
            "{}x{} is smaller than the 3x3 Sobel kernel",
            image.width(),
            image.height()
        )));
    }
    let mut out = Vec::with_capacity(image.len());
    for y in 0..image.height() as isize {
        for x in 0..image.width() as isize {
            let p = |dx: isize, dy: isize| image.get_clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    image.with_data(out)
}

/// No-intercept least-squares fit of one row of `S(x)` on the same row of `S(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowFit {
    pub alpha: f64,
    pub std_dev: f64,
    pub rss: f64,
}

/// Per-row relative sharpness of an image against a reference.
///
/// Rows where the reference has no gradient energy cannot be regressed and are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessProfile {
    pub rows: Vec<Option<RowFit>>,
}

impl SharpnessProfile {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn coefficients(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.map(|f| f.alpha)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn mean_coefficient(&self) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().flatten().map(|f| f.alpha).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Row-wise `alpha_i = S(x)_i . S(y)_i / S(y)_i . S(y)_i`, its residual sum of
/// squares and standard error `sqrt(RSS_i / ((N - 1) S(y)_i . S(y)_i))`, with
/// `N` the row length.
pub fn row_sharpness_profile(image: &Image, reference: &Image) -> Result<SharpnessProfile> {
    image.ensure_same_shape(reference)?;
    let sx = sobel_sharpness(image)?;
    let sy = sobel_sharpness(reference)?;
    let n = image.width() as f64;
    let rows = (0..image.height())
        .map(|i| {
            let (rx, ry) = (sx.row(i), sy.row(i));
            let syy: f64 = ry.iter().map(|v| v * v).sum();
            if syy <= 0.0 {
                return None;
            }
            let sxy: f64 = rx.iter().zip(ry).map(|(a, b)| a * b).sum();
            let alpha = sxy / syy;
            let rss: f64 = rx
                .iter()
                .zip(ry)
                .map(|(a, b)| (a - alpha * b).powi(2))
                .sum();
            let std_dev = (rss / ((n - 1.0) * syy)).sqrt();
            Some(RowFit {
                alpha,
                std_dev,
                rss,
            })
        })
        .collect();
    Ok(SharpnessProfile { rows })
}
