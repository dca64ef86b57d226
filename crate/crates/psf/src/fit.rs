use nalgebra::{DMatrix, DVector};
use snapfocus_imaging::Image;

/// FWHM of a Gaussian in units of its standard deviation, 2·sqrt(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

pub fn fwhm_from_sigma(sigma: f64) -> f64 {
    FWHM_PER_SIGMA * sigma
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub offset: f64,
    /// Euclidean norm of the final residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GaussianFit {
    pub fn fwhm_x(&self) -> f64 {
        fwhm_from_sigma(self.sigma_x)
    }

    pub fn fwhm_y(&self) -> f64 {
        fwhm_from_sigma(self.sigma_y)
    }

    /// Mean of the x and y FWHM.
    pub fn lateral_fwhm(&self) -> f64 {
        0.5 * (self.fwhm_x() + self.fwhm_y())
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        model(&self.params(), x, y)
    }

    fn params(&self) -> [f64; 6] {
        [self.amplitude, self.x0, self.y0, self.sigma_x, self.sigma_y, self.offset]
    }

    /// Converged with a positive amplitude and finite, positive widths.
    pub fn is_usable(&self) -> bool {
        self.converged
            && self.amplitude > 0.0
            && self.sigma_x.is_finite()
            && self.sigma_y.is_finite()
            && self.sigma_x > 0.0
            && self.sigma_y > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once ‖step‖ / ‖params‖ falls below this.
    pub step_tolerance: f64,
    /// Start from the brightest pixel within 3 px of this point instead of
    /// the global maximum, so a brighter neighbour does not capture the fit.
    pub center_hint: Option<(f64, f64)>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-8,
            center_hint: None,
        }
    }
}

fn model(p: &[f64; 6], x: f64, y: f64) -> f64 {
    let [a, x0, y0, sx, sy, b] = *p;
    let ex = (x - x0) * (x - x0) / (2.0 * sx * sx);
    let ey = (y - y0) * (y - y0) / (2.0 * sy * sy);
    a * (-(ex + ey)).exp() + b
}

fn residuals(p: &[f64; 6], crop: &Image) -> DVector<f64> {
    let w = crop.width();
    DVector::from_iterator(
        crop.len(),
        crop.data().iter().enumerate().map(|(i, &v)| model(p, (i % w) as f64, (i / w) as f64) - v),
    )
}

/// Starting point: offset from the lowest decile, centre at the brightest
/// (candidate) pixel, width from the area above half maximum.
fn initial_guess(crop: &Image, hint: Option<(f64, f64)>) -> [f64; 6] {
    let mut sorted = crop.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let offset = sorted[sorted.len() / 10];
    let w = crop.width();
    let near = |i: usize| match hint {
        Some((hx, hy)) => ((i % w) as f64 - hx).hypot((i / w) as f64 - hy) <= 3.0,
        None => true,
    };
    let (imax, &vmax) = crop
        .data()
        .iter()
        .enumerate()
        .filter(|(i, _)| near(*i))
        .max_by(|a, b| a.1.total_cmp(b.1))
        .or_else(|| crop.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)))
        .expect("non-empty crop");
    let amplitude = vmax - offset;
    let half = offset + 0.5 * amplitude;
    let area = crop.data().iter().filter(|&&v| v >= half).count() as f64;
    let sigma = ((area / std::f64::consts::PI).sqrt() * 2.0 / FWHM_PER_SIGMA).max(0.5);
    [amplitude, (imax % w) as f64, (imax / w) as f64, sigma, sigma, offset]
}

/// Least-squares fit of `A·exp(−(x−x0)²/2σx² − (y−y0)²/2σy²) + B` by
/// Levenberg–Marquardt with a central-difference Jacobian. Pixel (i, j) sits
/// at coordinates (i, j). A crop without contrast returns a zero-amplitude,
/// unconverged fit.
pub fn fit_gaussian2d(crop: &Image) -> GaussianFit {
    fit_gaussian2d_with(crop, &FitConfig::default())
}

pub fn fit_gaussian2d_with(crop: &Image, cfg: &FitConfig) -> GaussianFit {
    let mut p = initial_guess(crop, cfg.center_hint);
    let flat = |p: [f64; 6]| GaussianFit {
        amplitude: 0.0,
        x0: p[1],
        y0: p[2],
        sigma_x: p[3],
        sigma_y: p[4],
        offset: crop.mean(),
        residual_norm: crop.std_dev() * (crop.len() as f64).sqrt(),
        iterations: 0,
        converged: false,
    };
    if !(p[0] > 1e-12 * crop.max().abs().max(1e-300)) {
        return flat(p);
    }
    let mut r = residuals(&p, crop);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let jac = jacobian(&p, crop);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: [f64; 6] = std::array::from_fn(|k| p[k] + step[k]);
            let r_trial = residuals(&trial, crop);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial <= cost {
                let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let small = step.norm() <= cfg.step_tolerance * (pnorm + cfg.step_tolerance);
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                converged = small;
                break;
            }
            lambda *= 10.0;
        }
        // No step reduces the cost: we are at a (numerical) minimum.
        if !accepted {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    GaussianFit {
        amplitude: p[0],
        x0: p[1],
        y0: p[2],
        sigma_x: p[3].abs(),
        sigma_y: p[4].abs(),
        offset: p[5],
        residual_norm: cost.sqrt(),
        iterations,
        converged,
    }
}

fn jacobian(p: &[f64; 6], crop: &Image) -> DMatrix<f64> {
    let w = crop.width();
    let mut jac = DMatrix::zeros(crop.len(), 6);
    for k in 0..6 {
        let h = 1e-6 * p[k].abs().max(1.0);
        let mut hi = *p;
        let mut lo = *p;
        hi[k] += h;
        lo[k] -= h;
        for i in 0..crop.len() {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            jac[(i, k)] = (model(&hi, x, y) - model(&lo, x, y)) / (2.0 * h);
        }
    }
    jac
}

/// Render the fitted model on a `width`×`height` grid.
pub fn render(fit: &GaussianFit, width: usize, height: usize) -> Image {
    Image::from_fn(width, height, 1.0, |x, y| fit.eval(x as f64, y as f64)).expect("non-zero size")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(a: f64, x0: f64, y0: f64, sx: f64, sy: f64, b: f64) -> Image {
        let truth = GaussianFit {
            amplitude: a,
            x0,
            y0,
            sigma_x: sx,
            sigma_y: sy,
            offset: b,
            residual_norm: 0.0,
            iterations: 0,
            converged: true,
        };
        render(&truth, 30, 30)
    }

    #[test]
    fn fwhm_identity() {
        assert!((FWHM_PER_SIGMA - 2.0 * (2.0 * 2f64.ln()).sqrt()).abs() < 1e-15);
        assert!((fwhm_from_sigma(2.0) - 4.709_640_090_061_899).abs() < 1e-12);
    }

    #[test]
    fn recovers_isotropic_sigma() {
        let fit = fit_gaussian2d(&gaussian(1.0, 14.3, 15.6, 2.0, 2.0, 0.1));
        assert!(fit.converged);
        assert!((fit.fwhm_x() / 4.709_640_090_061_899 - 1.0).abs() < 0.01);
    }

    #[test]
    fn recovers_all_parameters() {
        let fit = fit_gaussian2d(&gaussian(3.0, 12.2, 16.7, 1.7, 2.9, 0.4));
        let got = [fit.amplitude, fit.x0, fit.y0, fit.sigma_x, fit.sigma_y, fit.offset];
        for (g, t) in got.iter().zip([3.0, 12.2, 16.7, 1.7, 2.9, 0.4]) {
            assert!((g - t).abs() <= 1e-3 * t, "{g} vs {t}");
        }
    }

    #[test]
    fn flat_crop_is_flagged() {
        let fit = fit_gaussian2d(&Image::filled(30, 30, 1.0, 2.0).unwrap());
        assert!(!fit.converged);
        assert_eq!(fit.amplitude, 0.0);
        assert!(!fit.is_usable());
    }
}
