use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use snapfocus_imaging::Image;

use crate::error::{OpticsError, Result};

/// Camera noise applied after blur: optional shot noise at `poisson_scale`
/// photons per intensity unit, then additive Gaussian read noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub gaussian_sigma: f64,
    pub poisson_scale: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_none(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.poisson_scale == 0.0
    }
}

pub fn add_noise(image: &Image, noise: &NoiseModel, seed: u64) -> Result<Image> {
    if !(noise.gaussian_sigma >= 0.0 && noise.poisson_scale >= 0.0) {
        return Err(OpticsError::InvalidParameter(format!("{noise:?}")));
    }
    if noise.is_none() {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    if noise.poisson_scale > 0.0 {
        for v in out.data_mut() {
            if *v < 0.0 {
                return Err(OpticsError::InvalidParameter(
                    "shot noise needs non-negative intensities".into(),
                ));
            }
            let lambda = *v * noise.poisson_scale;
            let photons = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| OpticsError::InvalidParameter(e.to_string()))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            *v = photons / noise.poisson_scale;
        }
    }
    if noise.gaussian_sigma > 0.0 {
        for v in out.data_mut() {
            *v += noise.gaussian_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}
