//! Single-pass inference with replicate padding to the network's size
//! multiple.

use snapfocus_imaging::Image;

use crate::data::Stats;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{Decoder, Generator};
use crate::tensor::Tensor;

/// Pads right and bottom by edge replication up to multiples of `m`.
pub fn pad_to_multiple(image: &Image, m: usize) -> Result<Image> {
    let w = image.width().div_ceil(m) * m;
    let h = image.height().div_ceil(m) * m;
    if (w, h) == (image.width(), image.height()) {
        return Ok(image.clone());
    }
    Ok(Image::from_fn(w, h, image.pixel_pitch(), |x, y| {
        image.get(x.min(image.width() - 1), y.min(image.height() - 1))
    })?)
}

/// Network output on an already normalized image, cropped back to its size.
pub fn forward_normalized(generator: &Generator, normalized: &Image) -> Result<Image> {
    let padded = pad_to_multiple(normalized, generator.config.multiple())?;
    let mut g = Graph::new();
    let b = generator.bind(&mut g, false);
    let x = g.constant(Tensor::from_images(&[&padded])?);
    let y = generator.forward(&mut g, &b, x)?;
    let out = g.value(y).to_image(0, 0, normalized.pixel_pitch())?;
    Ok(out.crop(0, 0, normalized.width(), normalized.height())?)
}

/// Z-score with the input's statistics, run the generator once and map the
/// result back with the same statistics.
pub fn infer(generator: &Generator, image: &Image) -> Result<Image> {
    let stats = Stats::of(image);
    let out = forward_normalized(generator, &stats.apply(image))?;
    Ok(stats.invert(&out))
}

/// Per-pixel defocus estimate from a decoder head.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmEstimate {
    pub map: Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStat {
    pub mean: f64,
    pub std: f64,
}

impl DpmEstimate {
    pub fn mean(&self) -> f64 {
        self.map.mean()
    }

    /// Mean and population std of each row.
    pub fn row_profile(&self) -> Vec<RowStat> {
        (0..self.map.height())
            .map(|y| {
                let r = self.map.row(y);
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                RowStat { mean, std: var.sqrt() }
            })
            .collect()
    }

    /// Least-squares slope of the row means against the row index.
    pub fn row_slope(&self) -> f64 {
        let means: Vec<f64> = self.row_profile().iter().map(|r| r.mean).collect();
        let n = means.len() as f64;
        if means.len() < 2 {
            return 0.0;
        }
        let xm = (n - 1.0) / 2.0;
        let ym = means.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, y) in means.iter().enumerate() {
            let dx = i as f64 - xm;
            sxy += dx * (y - ym);
            sxx += dx * dx;
        }
        sxy / sxx
    }
}

/// Decoder map for `image`, using the frozen generator's encoder features.
pub fn decoder_infer(generator: &Generator, decoder: &Decoder, image: &Image) -> Result<DpmEstimate> {
    let normalized = Stats::of(image).apply(image);
    let padded = pad_to_multiple(&normalized, generator.config.multiple())?;
    let mut g = Graph::new();
    let gb = generator.bind(&mut g, false);
    let db = decoder.bind(&mut g, false);
    let x = g.constant(Tensor::from_images(&[&padded])?);
    let f = generator.encode(&mut g, &gb, x)?;
    let y = decoder.forward(&mut g, &db, &f)?;
    let map = g.value(y).to_image(0, 0, image.pixel_pitch())?;
    Ok(DpmEstimate {
        map: map.crop(0, 0, image.width(), image.height())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeneratorConfig;

    #[test]
    fn padding_replicates_edges() {
        let img = Image::from_fn(3, 2, 1.0, |x, y| (x + 10 * y) as f64).unwrap();
        let p = pad_to_multiple(&img, 4).unwrap();
        assert_eq!((p.width(), p.height()), (4, 4));
        assert_eq!(p.get(3, 3), img.get(2, 1));
        assert_eq!(p.get(1, 0), img.get(1, 0));
    }

    #[test]
    fn inference_is_repeatable_and_keeps_size() {
        let gen = Generator::new(GeneratorConfig::default(), 1).unwrap();
        let img = Image::from_fn(30, 21, 0.5, |x, y| ((x * 7 + y * 3) % 5) as f64).unwrap();
        let a = infer(&gen, &img).unwrap();
        let b = infer(&gen, &img).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height()), (30, 21));
        assert!(a.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn row_slope_of_a_ramp() {
        let map = Image::from_fn(5, 4, 1.0, |_, y| 0.5 * y as f64 + 1.0).unwrap();
        let est = DpmEstimate { map };
        assert!((est.row_slope() - 0.5).abs() < 1e-12);
        assert!(est.row_profile().iter().all(|r| r.std == 0.0));
    }
}
