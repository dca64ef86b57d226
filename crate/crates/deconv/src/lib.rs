//! Non-blind deconvolution baselines: Richardson-Lucy and Landweber, both
//! with edge-replicated convolution, plus border-cropped quality metrics.

use std::fmt;
use std::str::FromStr;

use snapfocus_imaging::filter::{convolve_replicate, correlate_replicate};
use snapfocus_imaging::{rmse, ssim, Image, ImagingError, MsssimConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeconvError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("diverged at iteration {iteration}: residual {residual} vs initial {initial}")]
    Diverged {
        iteration: usize,
        residual: f64,
        initial: f64,
        trace: Vec<f64>,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, DeconvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    RichardsonLucy,
    Landweber,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RichardsonLucy => "rl",
            Self::Landweber => "landweber",
        })
    }
}

impl FromStr for Algorithm {
    type Err = DeconvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rl" | "richardson-lucy" => Ok(Self::RichardsonLucy),
            "landweber" | "lw" => Ok(Self::Landweber),
            _ => Err(DeconvError::InvalidInput(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeconvConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    /// Landweber step; ignored by RL.
    pub step_gamma: f64,
    /// Pixels dropped at each edge before computing metrics.
    pub boundary_crop: usize,
}

impl DeconvConfig {
    pub fn rl() -> Self {
        Self {
            algorithm: Algorithm::RichardsonLucy,
            iterations: 100,
            step_gamma: 0.1,
            boundary_crop: 10,
        }
    }

    pub fn landweber() -> Self {
        Self {
            algorithm: Algorithm::Landweber,
            ..Self::rl()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(DeconvError::InvalidInput("iterations must be >= 1".into()));
        }
        if self.algorithm == Algorithm::Landweber {
            check_step(self.step_gamma)?;
        }
        Ok(())
    }
}

/// A non-negative unit-sum kernel has operator norm at most 1, so any step in
/// (0, 2] is convergent.
fn check_step(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 2.0 {
        Ok(())
    } else {
        Err(DeconvError::InvalidInput(format!("step {gamma} outside (0, 2]")))
    }
}

fn check_psf(psf: &Image) -> Result<()> {
    if psf.width() % 2 == 0 || psf.height() % 2 == 0 {
        return Err(DeconvError::InvalidInput("kernel sides must be odd".into()));
    }
    if psf.data().iter().any(|&v| v < 0.0) {
        return Err(DeconvError::InvalidInput("kernel has negative entries".into()));
    }
    if (psf.sum() - 1.0).abs() > 1e-6 {
        return Err(DeconvError::InvalidInput(format!("kernel sums to {}, not 1", psf.sum())));
    }
    Ok(())
}

fn l2(image: &Image) -> f64 {
    image.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Multiplicative RL updates starting from the observation. Dark pixels are
/// guarded by dividing by `max(Hx, 1e-12·max y)`.
pub fn richardson_lucy(observed: &Image, psf: &Image, iterations: usize) -> Result<Image> {
    check_psf(psf)?;
    if observed.data().iter().any(|&v| v < 0.0) {
        return Err(DeconvError::InvalidInput("observation has negative pixels".into()));
    }
    let eps = 1e-12 * observed.max().max(f64::MIN_POSITIVE);
    let mut x = observed.clone();
    for _ in 0..iterations {
        let hx = convolve_replicate(&x, psf)?;
        let ratio = observed.zip_map(&hx, |y, h| y / h.max(eps))?;
        let back = correlate_replicate(&ratio, psf)?;
        x = x.zip_map(&back, |a, b| a * b)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandweberOutput {
    pub image: Image,
    /// ‖y − H x_k‖ for k = 0..=iterations.
    pub residuals: Vec<f64>,
}

/// Gradient steps `x += γ·Hᵀ(y − Hx)` from `x₀ = y`. Fails if the residual
/// exceeds ten times its initial value.
pub fn landweber(observed: &Image, psf: &Image, iterations: usize, step_gamma: f64) -> Result<LandweberOutput> {
    landweber_from(observed, psf, observed.clone(), iterations, step_gamma)
}

pub fn landweber_from(
    observed: &Image,
    psf: &Image,
    initial_guess: Image,
    iterations: usize,
    step_gamma: f64,
) -> Result<LandweberOutput> {
    check_psf(psf)?;
    check_step(step_gamma)?;
    observed.ensure_same_shape(&initial_guess)?;
    let mut x = initial_guess;
    let mut residuals = Vec::with_capacity(iterations + 1);
    let mut residual = observed.zip_map(&convolve_replicate(&x, psf)?, |y, h| y - h)?;
    let initial = l2(&residual);
    residuals.push(initial);
    for k in 1..=iterations {
        let grad = correlate_replicate(&residual, psf)?;
        x = x.zip_map(&grad, |a, g| a + step_gamma * g)?;
        residual = observed.zip_map(&convolve_replicate(&x, psf)?, |y, h| y - h)?;
        let r = l2(&residual);
        residuals.push(r);
        if !r.is_finite() || r > 10.0 * initial.max(f64::MIN_POSITIVE) {
            return Err(DeconvError::Diverged {
                iteration: k,
                residual: r,
                initial,
                trace: residuals,
            });
        }
    }
    Ok(LandweberOutput { image: x, residuals })
}

pub fn deconvolve(observed: &Image, psf: &Image, cfg: &DeconvConfig) -> Result<Image> {
    cfg.validate()?;
    match cfg.algorithm {
        Algorithm::RichardsonLucy => richardson_lucy(observed, psf, cfg.iterations),
        Algorithm::Landweber => Ok(landweber(observed, psf, cfg.iterations, cfg.step_gamma)?.image),
    }
}

/// (SSIM, RMSE) of `result` against `truth` after dropping `crop` pixels at
/// every edge. SSIM uses the single-scale defaults.
pub fn cropped_metrics(result: &Image, truth: &Image, crop: usize) -> Result<(f64, f64)> {
    result.ensure_same_shape(truth)?;
    if 2 * crop >= result.width() || 2 * crop >= result.height() {
        return Err(DeconvError::InvalidInput(format!(
            "crop {crop} too large for {}x{}",
            result.width(),
            result.height()
        )));
    }
    let a = result.crop_border(crop)?;
    let b = truth.crop_border(crop)?;
    Ok((ssim(&a, &b, &MsssimConfig::single_scale())?, rmse(&a, &b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta() -> Image {
        Image::new(3, 3, 1.0, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap()
    }

    fn box3() -> Image {
        Image::filled(3, 3, 1.0, 1.0 / 9.0).unwrap()
    }

    fn ramp() -> Image {
        Image::from_fn(16, 16, 1.0, |x, y| 1.0 + (x * 3 + y * 7 % 5) as f64).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let y = ramp();
        assert_eq!(richardson_lucy(&y, &delta(), 7).unwrap(), y);
        assert_eq!(landweber(&y, &delta(), 1, 1.0).unwrap().image, y);
    }

    #[test]
    fn landweber_identity_contracts_geometrically() {
        let y = ramp();
        assert!(landweber(&y, &delta(), 10, 0.1).unwrap().residuals.iter().all(|&r| r == 0.0));
        let zero = y.map(|_| 0.0);
        let out = landweber_from(&y, &delta(), zero, 10, 0.1).unwrap();
        for (k, r) in out.residuals.iter().enumerate() {
            let want = 0.9f64.powi(k as i32) * out.residuals[0];
            assert!((r - want).abs() < 1e-9 * out.residuals[0]);
        }
    }

    #[test]
    fn flat_observation_is_a_fixed_point() {
        let y = Image::filled(12, 12, 1.0, 3.0).unwrap();
        let out = richardson_lucy(&y, &box3(), 20).unwrap();
        for v in out.data() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = ramp();
        let neg = y.map(|v| v - 5.0);
        assert!(richardson_lucy(&neg, &box3(), 1).is_err());
        assert!(landweber(&y, &box3(), 1, 2.5).is_err());
        assert!(landweber(&y, &box3(), 1, 0.0).is_err());
        let unnormalized = Image::filled(3, 3, 1.0, 1.0).unwrap();
        assert!(richardson_lucy(&y, &unnormalized, 1).is_err());
        assert!(cropped_metrics(&y, &y, 8).is_err());
        assert!(DeconvConfig { iterations: 0, ..DeconvConfig::rl() }.validate().is_err());
    }

    #[test]
    fn perfect_result_metrics() {
        let y = Image::from_fn(32, 32, 1.0, |x, y| ((x * y) % 7) as f64).unwrap();
        let (s, r) = cropped_metrics(&y, &y, 10).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(r, 0.0);
        let (s0, r0) = cropped_metrics(&y, &y.map(|v| v + 0.5), 0).unwrap();
        assert_eq!(r0, rmse(&y, &y.map(|v| v + 0.5)).unwrap());
        assert!(s0 < 1.0);
    }

    #[test]
    fn algorithm_names() {
        assert_eq!("rl".parse::<Algorithm>().unwrap(), Algorithm::RichardsonLucy);
        assert_eq!("Landweber".parse::<Algorithm>().unwrap(), Algorithm::Landweber);
        assert!("wiener".parse::<Algorithm>().is_err());
    }
}
