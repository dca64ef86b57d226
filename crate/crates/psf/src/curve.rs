use snapfocus_imaging::{Image, ZStack};

use crate::detect::BeadDetection;
use crate::error::{PsfError, Result};
use crate::fit::{fit_gaussian2d, fwhm_from_sigma, GaussianFit};

/// Lateral FWHM statistics per plane. Beads whose fit fails on a plane are
/// left out of that plane's statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FwhmCurve {
    pub dz: Vec<f64>,
    pub mean_fwhm: Vec<f64>,
    pub std_fwhm: Vec<f64>,
    pub n_beads: Vec<usize>,
}

impl FwhmCurve {
    pub fn len(&self) -> usize {
        self.dz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dz.is_empty()
    }

    /// Population standard deviation of the mean FWHM over planes whose dz
    /// lies in `[lo, hi]`.
    pub fn spread_within(&self, lo: f64, hi: f64) -> f64 {
        let vals: Vec<f64> = self
            .dz
            .iter()
            .zip(&self.mean_fwhm)
            .filter(|(z, m)| **z >= lo && **z <= hi && m.is_finite())
            .map(|(_, m)| *m)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    pub fn at(&self, dz: f64) -> Option<f64> {
        self.dz.iter().position(|&z| (z - dz).abs() < 1e-9).map(|i| self.mean_fwhm[i])
    }
}

/// Fit every detection's crop on every plane of `stack`.
pub fn fwhm_curve(stack: &ZStack, detections: &[BeadDetection]) -> Result<FwhmCurve> {
    if detections.is_empty() {
        return Err(PsfError::NoBeads);
    }
    let mut curve = FwhmCurve {
        dz: stack.dz_values().to_vec(),
        mean_fwhm: Vec::new(),
        std_fwhm: Vec::new(),
        n_beads: Vec::new(),
    };
    for plane in stack.planes() {
        let mut vals = Vec::with_capacity(detections.len());
        for d in detections {
            let fit = d.fit(&d.crop(plane)?);
            if fit.is_usable() {
                vals.push(fit.lateral_fwhm());
            }
        }
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        curve.mean_fwhm.push(if n > 0 { mean } else { f64::NAN });
        curve.std_fwhm.push(if n > 0 { std } else { f64::NAN });
        curve.n_beads.push(n);
    }
    Ok(curve)
}

/// Input and output curves over the same beads.
pub fn fwhm_vs_dz(input: &ZStack, output: &ZStack, detections: &[BeadDetection]) -> Result<(FwhmCurve, FwhmCurve)> {
    if input.len() != output.len()
        || input.width() != output.width()
        || input.height() != output.height()
        || input.dz_values() != output.dz_values()
    {
        return Err(PsfError::InvalidInput("input and output stacks differ in geometry".into()));
    }
    Ok((fwhm_curve(input, detections)?, fwhm_curve(output, detections)?))
}

pub const FWHM_CSV_HEADER: &str = "dz,mean_fwhm_input,std_fwhm_input,mean_fwhm_output,std_fwhm_output,n_beads";

pub fn format_fwhm_csv(input: &FwhmCurve, output: &FwhmCurve) -> String {
    let mut out = String::from(FWHM_CSV_HEADER);
    out.push('\n');
    for i in 0..input.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            input.dz[i],
            input.mean_fwhm[i],
            input.std_fwhm[i],
            output.mean_fwhm[i],
            output.std_fwhm[i],
            input.n_beads[i].min(output.n_beads[i])
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialFit {
    /// Fit on the slice: x in pixels from the crop's left edge, y in planes.
    pub fit: GaussianFit,
    /// Fitted focal position in dz units.
    pub z_center: f64,
    pub fwhm_z: f64,
    pub fwhm_x: f64,
}

/// Gaussian fit on the x–z slice through the bead's focused-plane centre.
/// Needs evenly spaced planes.
pub fn axial_fwhm(stack: &ZStack, detection: &BeadDetection) -> Result<AxialFit> {
    let zs = stack.dz_values();
    if zs.len() < 3 {
        return Err(PsfError::InvalidInput("axial fit needs at least 3 planes".into()));
    }
    let step = (zs[zs.len() - 1] - zs[0]) / (zs.len() - 1) as f64;
    if zs.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
        return Err(PsfError::InvalidInput("planes are not evenly spaced".into()));
    }
    let (_, cy) = detection.fitted_center();
    let row = cy.round();
    let (x0, size) = (detection.crop_origin.0, detection.crop_size);
    if row < 0.0 || row as usize >= stack.height() || x0 + size > stack.width() {
        return Err(PsfError::SliceOutside(format!("row {row}, columns {x0}..{}", x0 + size)));
    }
    let row = row as usize;
    let mut data = Vec::with_capacity(size * zs.len());
    for plane in stack.planes() {
        data.extend_from_slice(&plane.row(row)[x0..x0 + size]);
    }
    let slice = Image::new(size, zs.len(), 1.0, data)?;
    let fit = fit_gaussian2d(&slice);
    Ok(AxialFit {
        fit,
        z_center: zs[0] + fit.y0 * step,
        fwhm_z: fwhm_from_sigma(fit.sigma_y) * step,
        fwhm_x: fit.fwhm_x(),
    })
}
