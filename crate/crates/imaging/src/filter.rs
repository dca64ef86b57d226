//! Edge-replicated convolutions shared by the blur simulator, the deconvolution
//! baselines and the metrics.

use crate::error::{ImagingError, Result};
use crate::image::Image;

/// Normalized 1D Gaussian taps on `[-radius, radius]`.
pub fn gaussian_kernel_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

fn check_odd(kernel: &Image) -> Result<()> {
    if kernel.width() % 2 == 0 || kernel.height() % 2 == 0 {
        return Err(ImagingError::InvalidArgument(format!(
            "kernel sides must be odd, got {}x{}",
            kernel.width(),
            kernel.height()
        )));
    }
    Ok(())
}

/// `out(x, y) = sum_{u,v} k(u, v) * img(x - u, y - v)` with the kernel centred
/// on its middle sample and image borders extended by replication.
pub fn convolve_replicate(image: &Image, kernel: &Image) -> Result<Image> {
    check_odd(kernel)?;
    let (w, h) = (image.width(), image.height());
    let (kw, kh) = (kernel.width(), kernel.height());
    let (rx, ry) = ((kw / 2) as isize, (kh / 2) as isize);
    // Pad once so the inner loop is a plain strided dot product.
    let pw = w + kw - 1;
    let ph = h + kh - 1;
    let mut padded = vec![0.0; pw * ph];
    for py in 0..ph {
        for px in 0..pw {
            padded[py * pw + px] = image.get_clamped(px as isize - rx, py as isize - ry);
        }
    }
    let k = kernel.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for v in 0..kh {
                // Flipped kernel row: tap (u, v) multiplies img(x - u, y - v).
                let krow = &k[(kh - 1 - v) * kw..(kh - v) * kw];
                let prow = &padded[(y + v) * pw + x..(y + v) * pw + x + kw];
                for (kk, pp) in krow.iter().rev().zip(prow) {
                    acc += kk * pp;
                }
            }
            out[y * w + x] = acc;
        }
    }
    image.with_data(out)
}

/// Convolution with the point-reflected kernel, i.e. the adjoint of
/// [`convolve_replicate`] away from the borders.
pub fn correlate_replicate(image: &Image, kernel: &Image) -> Result<Image> {
    convolve_replicate(image, &flip_kernel(kernel))
}

pub fn flip_kernel(kernel: &Image) -> Image {
    let mut data = kernel.data().to_vec();
    data.reverse();
    kernel.with_data(data).expect("same shape")
}

/// Separable convolution: rows with `kx`, then columns with `ky`.
pub fn convolve_separable_replicate(image: &Image, kx: &[f64], ky: &[f64]) -> Result<Image> {
    if kx.len() % 2 == 0 || ky.len() % 2 == 0 {
        return Err(ImagingError::InvalidArgument(
            "separable taps must have odd length".into(),
        ));
    }
    let (w, h) = (image.width(), image.height());
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let src = image.data();
    let mut tmp = vec![0.0; w * h];
    let mut line = vec![0.0; w + kx.len() - 1];
    for y in 0..h {
        for (i, slot) in line.iter_mut().enumerate() {
            let xs = (i as isize - rx).clamp(0, w as isize - 1) as usize;
            *slot = src[y * w + xs];
        }
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kt) in kx.iter().rev().enumerate() {
                acc += kt * line[x + t];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    let mut col = vec![0.0; h + ky.len() - 1];
    for x in 0..w {
        for (i, slot) in col.iter_mut().enumerate() {
            let ys = (i as isize - ry).clamp(0, h as isize - 1) as usize;
            *slot = tmp[ys * w + x];
        }
        for y in 0..h {
            let mut acc = 0.0;
            for (t, &kt) in ky.iter().rev().enumerate() {
                acc += kt * col[y + t];
            }
            out[y * w + x] = acc;
        }
    }
    image.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let img = Image::from_fn(6, 5, 1.0, |x, y| (x * 7 + y * 3) as f64).unwrap();
        let delta = Image::new(3, 3, 1.0, vec![0., 0., 0., 0., 1., 0., 0., 0., 0.]).unwrap();
        assert_eq!(convolve_replicate(&img, &delta).unwrap(), img);
    }

    #[test]
    fn convolution_flips_kernel() {
        let mut img = Image::filled(7, 7, 1.0, 0.0).unwrap();
        img.set(3, 3, 1.0);
        // Shift kernel: tap at (u=+1, v=0).
        let k = Image::new(3, 3, 1.0, vec![0., 0., 0., 0., 0., 1., 0., 0., 0.]).unwrap();
        let out = convolve_replicate(&img, &k).unwrap();
        assert_eq!(out.get(4, 3), 1.0);
        let corr = correlate_replicate(&img, &k).unwrap();
        assert_eq!(corr.get(2, 3), 1.0);
    }

    #[test]
    fn separable_matches_dense() {
        let img = Image::from_fn(9, 8, 1.0, |x, y| ((x * 13 + y * 5) % 7) as f64).unwrap();
        let g = gaussian_kernel_1d(1.2, 3);
        let dense = Image::from_fn(7, 7, 1.0, |x, y| g[x] * g[y]).unwrap();
        let a = convolve_separable_replicate(&img, &g, &g).unwrap();
        let b = convolve_replicate(&img, &dense).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
