use std::fmt;
use std::str::FromStr;

use snapfocus_imaging::Image;

use crate::error::{AutofocusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FocusCriterion {
    /// Vollath F4: lag-1 minus lag-2 vertical autocorrelation.
    Vol4,
    /// Vollath F5: lag-1 vertical autocorrelation minus MN·μ².
    Vol5,
    /// Population standard deviation.
    Std,
    /// Variance divided by the mean intensity.
    Nvar,
}

impl FocusCriterion {
    pub const ALL: [FocusCriterion; 4] = [Self::Vol4, Self::Vol5, Self::Std, Self::Nvar];

    pub fn name(self) -> &'static str {
        match self {
            Self::Vol4 => "VOL4",
            Self::Vol5 => "VOL5",
            Self::Std => "STD",
            Self::Nvar => "NVAR",
        }
    }
}

impl fmt::Display for FocusCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FocusCriterion {
    type Err = AutofocusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VOL4" => Ok(Self::Vol4),
            "VOL5" => Ok(Self::Vol5),
            "STD" => Ok(Self::Std),
            "NVAR" => Ok(Self::Nvar),
            _ => Err(AutofocusError::InvalidConfig(format!("unknown criterion {s:?}"))),
        }
    }
}

/// How μ is computed. `Mean` divides the pixel sum by MN; `RawSum` keeps the
/// bare sum, as the intensity formula is sometimes written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanConvention {
    #[default]
    Mean,
    RawSum,
}

pub fn focus_metric(image: &Image, criterion: FocusCriterion) -> Result<f64> {
    focus_metric_with(image, criterion, MeanConvention::Mean)
}

/// Rows are indexed by m (image y), columns by n (image x).
pub fn focus_metric_with(image: &Image, criterion: FocusCriterion, convention: MeanConvention) -> Result<f64> {
    let rows = image.height();
    let mn = image.len() as f64;
    let mu = match convention {
        MeanConvention::Mean => image.mean(),
        MeanConvention::RawSum => image.sum(),
    };
    let lag = |k: usize| -> f64 {
        (0..rows.saturating_sub(k))
            .map(|m| image.row(m).iter().zip(image.row(m + k)).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let sq_dev = || image.data().iter().map(|v| (v - mu).powi(2)).sum::<f64>();
    match criterion {
        FocusCriterion::Vol4 => {
            if rows < 3 {
                return Err(AutofocusError::Degenerate(format!("VOL4 needs at least 3 rows, got {rows}")));
            }
            Ok(lag(1) - lag(2))
        }
        FocusCriterion::Vol5 => Ok(lag(1) - mn * mu * mu),
        FocusCriterion::Std => Ok((sq_dev() / mn).sqrt()),
        FocusCriterion::Nvar => {
            if mu == 0.0 {
                return Err(AutofocusError::Degenerate("NVAR with zero mean intensity".into()));
            }
            Ok(sq_dev() / (mn * mu))
        }
    }
}

/// Index of the largest value; ties go to the smaller |z|.
pub fn argmax_by_z(curve: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(z, f)) in curve.iter().enumerate() {
        best = match best {
            Some(b) if !prefer(f, z, curve[b].1, curve[b].0) => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// Whether (f, z) beats (f_best, z_best) for maximization.
pub(crate) fn prefer(f: f64, z: f64, f_best: f64, z_best: f64) -> bool {
    f > f_best || (f == f_best && z.abs() < z_best.abs())
}
