//! Held-out evaluation: per-defocus quality curves, range comparison and
//! tilted-sample sharpness profiles.

use std::collections::BTreeMap;

use snapfocus_autofocus::bench::mean_std;
use snapfocus_imaging::transform::mip;
use snapfocus_imaging::{rmse, row_sharpness_profile, ssim, Image, MsssimConfig, ZStack};
use snapfocus_net::data::Pair;
use snapfocus_net::infer::infer;
use snapfocus_net::model::Generator;
use snapfocus_optics::seed::derive_seed;
use snapfocus_optics::{add_noise, defocus_spatial, dpm_surface, synth_scene, DefocusMap, NoiseModel, PsfModel, SceneSpec, Surface};

use crate::error::{BenchError, Result};

pub const CURVES_CSV_HEADER: &str = "dz,zone,n,ssim_input_mean,ssim_input_std,ssim_output_mean,ssim_output_std,rmse_input_mean,rmse_input_std,rmse_output_mean,rmse_output_std";
pub const TILT_CSV_HEADER: &str = "row,alpha_input_mean,alpha_input_std,alpha_output_mean,alpha_output_std";

/// Whether a defocus lies inside the range the model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    Inside,
    Outside,
}

impl Zone {
    pub fn of(dz: f64, trained_range: f64) -> Self {
        if dz.abs() <= trained_range + 1e-9 {
            Zone::Inside
        } else {
            Zone::Outside
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::Inside => "inside",
            Zone::Outside => "outside",
        }
    }
}

/// Mean and sample std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub dz: f64,
    pub zone: Zone,
    pub n: usize,
    pub ssim_input: Summary,
    pub ssim_output: Summary,
    pub rmse_input: Summary,
    pub rmse_output: Summary,
}

impl CurveRow {
    pub fn ssim_gain(&self) -> f64 {
        self.ssim_output.mean - self.ssim_input.mean
    }
}

fn dz_key(dz: f64) -> i64 {
    (dz * 1000.0).round() as i64
}

/// Per-dz SSIM and RMSE of the input and of the model output against the
/// target, sorted by dz. One row per distinct dz.
pub fn eval_curves(generator: &Generator, pairs: &[Pair], trained_range: f64) -> Result<Vec<CurveRow>> {
    if pairs.is_empty() {
        return Err(BenchError::Data("no test pairs".into()));
    }
    let cfg = MsssimConfig::single_scale();
    let mut groups: BTreeMap<i64, [Vec<f64>; 4]> = BTreeMap::new();
    for pair in pairs {
        let out = infer(generator, &pair.input)?;
        let g = groups.entry(dz_key(pair.dz)).or_default();
        g[0].push(ssim(&pair.input, &pair.target, &cfg)?);
        g[1].push(ssim(&out, &pair.target, &cfg)?);
        g[2].push(rmse(&pair.input, &pair.target)?);
        g[3].push(rmse(&out, &pair.target)?);
    }
    Ok(groups
        .into_iter()
        .map(|(k, g)| {
            let dz = k as f64 / 1000.0;
            CurveRow {
                dz,
                zone: Zone::of(dz, trained_range),
                n: g[0].len(),
                ssim_input: Summary::of(&g[0]),
                ssim_output: Summary::of(&g[1]),
                rmse_input: Summary::of(&g[2]),
                rmse_output: Summary::of(&g[3]),
            }
        })
        .collect())
}

pub fn format_curves_csv(rows: &[CurveRow]) -> String {
    let mut out = format!("{CURVES_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.dz,
            r.zone.name(),
            r.n,
            r.ssim_input.mean,
            r.ssim_input.std,
            r.ssim_output.mean,
            r.ssim_output.std,
            r.rmse_input.mean,
            r.rmse_input.std,
            r.rmse_output.mean,
            r.rmse_output.std
        ));
    }
    out
}

/// Curves of one model in a range comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeCurves {
    pub label: String,
    pub trained_range: f64,
    pub rows: Vec<CurveRow>,
}

/// Evaluate several models on one shared test sweep.
pub fn range_tradeoff(models: &[(&str, f64, &Generator)], pairs: &[Pair]) -> Result<Vec<RangeCurves>> {
    models
        .iter()
        .map(|&(label, range, generator)| {
            Ok(RangeCurves {
                label: label.to_string(),
                trained_range: range,
                rows: eval_curves(generator, pairs, range)?,
            })
        })
        .collect()
}

/// `dz,n,ssim_input_mean,rmse_input_mean`, then per model
/// `<label>_zone,<label>_ssim_output_mean,<label>_ssim_gain,<label>_rmse_output_mean`.
pub fn format_range_csv(curves: &[RangeCurves]) -> Result<String> {
    let Some(first) = curves.first() else {
        return Err(BenchError::Data("no models to compare".into()));
    };
    if curves.iter().any(|c| c.rows.len() != first.rows.len() || c.rows.iter().zip(&first.rows).any(|(a, b)| a.dz != b.dz)) {
        return Err(BenchError::Data("models were evaluated on different sweeps".into()));
    }
    let mut out = String::from("dz,n,ssim_input_mean,rmse_input_mean");
    for c in curves {
        let l = &c.label;
        out.push_str(&format!(",{l}_zone,{l}_ssim_output_mean,{l}_ssim_gain,{l}_rmse_output_mean"));
    }
    out.push('\n');
    for (i, base) in first.rows.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}", base.dz, base.n, base.ssim_input.mean, base.rmse_input.mean));
        for c in curves {
            let r = &c.rows[i];
            out.push_str(&format!(",{},{},{},{}", r.zone.name(), r.ssim_output.mean, r.ssim_gain(), r.rmse_output.mean));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Tilted-sample protocol settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltConfig {
    pub angle_deg: f64,
    /// Defocus at the image centre.
    pub offset: f64,
    /// Pixel pitch of the tilted scenes; sets the defocus span across rows.
    pub pixel_pitch: f64,
    pub size: usize,
    pub correlation_length: f64,
    /// Stage positions whose maximum projection forms the reference.
    pub mip_images: usize,
    pub layers: usize,
    pub fovs: usize,
    pub seed: u64,
}

impl Default for TiltConfig {
    fn default() -> Self {
        Self {
            angle_deg: 1.5,
            offset: 0.0,
            pixel_pitch: 1.8,
            size: 64,
            correlation_length: 1.5,
            mip_images: 10,
            layers: 16,
            fovs: 6,
            seed: 21,
        }
    }
}

/// One tilted FOV: the defocused capture and its maximum-projection reference.
pub struct TiltSample {
    pub dpm: DefocusMap,
    pub input: Image,
    pub reference: Image,
}

/// Tilted capture of a seeded texture plus a reference built as the maximum
/// projection of `mip_images` captures with the stage stepped so that every
/// row passes through focus.
pub fn tilt_sample(cfg: &TiltConfig, model: &PsfModel, noise: &NoiseModel, seed: u64) -> Result<TiltSample> {
    if cfg.mip_images < 2 {
        return Err(BenchError::Config("need at least two images for the reference".into()));
    }
    let mut spec = SceneSpec::texture(cfg.correlation_length, cfg.size, cfg.size, seed);
    spec.pixel_pitch = cfg.pixel_pitch;
    let scene = synth_scene(&spec)?;
    let dpm = dpm_surface(
        Surface::Tilt { angle_deg: cfg.angle_deg, offset: cfg.offset },
        cfg.size,
        cfg.size,
        cfg.pixel_pitch,
    )?;
    let capture = |map: &DefocusMap, k: u64| -> Result<Image> {
        Ok(add_noise(&defocus_spatial(&scene, model, map, cfg.layers)?, noise, derive_seed(seed, k))?)
    };
    let input = capture(&dpm, 0)?;
    let (lo, hi) = (dpm.min(), dpm.max());
    let step = (hi - lo) / (cfg.mip_images - 1) as f64;
    let planes = (0..cfg.mip_images)
        .map(|k| capture(&dpm.shifted(-(lo + k as f64 * step)), k as u64 + 1))
        .collect::<Result<Vec<_>>>()?;
    let dz: Vec<f64> = (0..cfg.mip_images).map(|k| lo + k as f64 * step).collect();
    let stack = ZStack::new(planes, dz)?;
    let reference = mip(&stack, 0, stack.len())?;
    Ok(TiltSample { dpm, input, reference })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltRow {
    pub row: usize,
    pub alpha_input: Summary,
    pub alpha_output: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltReport {
    pub rows: Vec<TiltRow>,
    pub fovs: usize,
    pub mean_alpha_input: f64,
    pub mean_alpha_output: f64,
    /// Fraction of rows whose mean output coefficient exceeds the input's.
    pub improved_fraction: f64,
}

/// Per-row relative sharpness of input and model output against the
/// reference, aggregated over the tilted FOVs.
pub fn tilt_report(generator: &Generator, cfg: &TiltConfig, model: &PsfModel, noise: &NoiseModel) -> Result<TiltReport> {
    if cfg.fovs == 0 {
        return Err(BenchError::Config("tilt report needs at least one FOV".into()));
    }
    let mut per_row: Vec<[Vec<f64>; 2]> = vec![Default::default(); cfg.size];
    for f in 0..cfg.fovs {
        let sample = tilt_sample(cfg, model, noise, derive_seed(cfg.seed, f as u64))?;
        let output = infer(generator, &sample.input)?;
        let a_in = row_sharpness_profile(&sample.input, &sample.reference)?;
        let a_out = row_sharpness_profile(&output, &sample.reference)?;
        for (r, (i, o)) in a_in.rows.iter().zip(&a_out.rows).enumerate() {
            if let (Some(i), Some(o)) = (i, o) {
                per_row[r][0].push(i.alpha);
                per_row[r][1].push(o.alpha);
            }
        }
    }
    let rows: Vec<TiltRow> = per_row
        .iter()
        .enumerate()
        .filter(|(_, v)| !v[0].is_empty())
        .map(|(row, v)| TiltRow {
            row,
            alpha_input: Summary::of(&v[0]),
            alpha_output: Summary::of(&v[1]),
        })
        .collect();
    if rows.is_empty() {
        return Err(BenchError::Data("reference has no gradient energy".into()));
    }
    let n = rows.len() as f64;
    Ok(TiltReport {
        mean_alpha_input: rows.iter().map(|r| r.alpha_input.mean).sum::<f64>() / n,
        mean_alpha_output: rows.iter().map(|r| r.alpha_output.mean).sum::<f64>() / n,
        improved_fraction: rows.iter().filter(|r| r.alpha_output.mean > r.alpha_input.mean).count() as f64 / n,
        fovs: cfg.fovs,
        rows,
    })
}

pub fn format_tilt_csv(report: &TiltReport) -> String {
    let mut out = format!("{TILT_CSV_HEADER}\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.row, r.alpha_input.mean, r.alpha_input.std, r.alpha_output.mean, r.alpha_output.std
        ));
    }
    out
}

pub fn format_tilt_summary(report: &TiltReport) -> String {
    format!(
        "fovs {}\nrows {}\nmean_alpha_input {:.4}\nmean_alpha_output {:.4}\nrows_improved {:.3}\n",
        report.fovs,
        report.rows.len(),
        report.mean_alpha_input,
        report.mean_alpha_output,
        report.improved_fraction
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zone_boundary_is_inside() {
        assert_eq!(Zone::of(4.0, 4.0), Zone::Inside);
        assert_eq!(Zone::of(-4.5, 4.0), Zone::Outside);
    }

    #[test]
    fn dz_keys_merge_float_noise() {
        assert_eq!(dz_key(0.1 + 0.2), dz_key(0.3));
        assert_ne!(dz_key(0.5), dz_key(-0.5));
    }
}
