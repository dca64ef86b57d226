use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::criteria::FocusCriterion;
use crate::error::{AutofocusError, Result};
use crate::search::{brent_search, SearchConfig};
use crate::stage::VirtualStage;

/// One line of the timing table: a method and its per-run statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub label: String,
    pub runs: usize,
    pub mean_time_s: f64,
    pub std_time_s: f64,
    pub mean_time_s_per_mm2: f64,
    pub std_time_s_per_mm2: f64,
    pub mean_acquisitions: f64,
    pub std_acquisitions: f64,
}

impl BenchRow {
    /// Summarize per-run times (seconds) and acquisition counts for a FOV of
    /// `fov_mm2` square millimetres.
    pub fn from_runs(label: impl Into<String>, times: &[f64], acquisitions: &[usize], fov_mm2: f64) -> Self {
        let acq: Vec<f64> = acquisitions.iter().map(|&a| a as f64).collect();
        let (mt, st) = mean_std(times);
        let (ma, sa) = mean_std(&acq);
        Self {
            label: label.into(),
            runs: times.len(),
            mean_time_s: mt,
            std_time_s: st,
            mean_time_s_per_mm2: mt / fov_mm2,
            std_time_s_per_mm2: st / fov_mm2,
            mean_acquisitions: ma,
            std_acquisitions: sa,
        }
    }
}

/// Mean and sample standard deviation (0 for a single sample).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Square millimetres covered by a `width`×`height` frame at `pixel_pitch` µm.
pub fn fov_area_mm2(width: usize, height: usize, pixel_pitch: f64) -> f64 {
    width as f64 * height as f64 * pixel_pitch * pixel_pitch * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub n_fovs: usize,
    pub n_repeats: usize,
    pub seed: u64,
    /// Start heights are drawn uniformly from focus ± this.
    pub start_spread: f64,
    pub search: SearchConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_fovs: 4,
            n_repeats: 4,
            seed: 0,
            start_spread: 4.0,
            search: SearchConfig::default(),
        }
    }
}

/// Run a Brent search for every criterion on every FOV, `n_repeats` times
/// each from random start heights. `make_stage(fov)` must return a fresh
/// stage whose travel covers `start_spread + search_range` around focus.
pub fn bench_autofocus(
    mut make_stage: impl FnMut(usize) -> Result<VirtualStage>,
    criteria: &[FocusCriterion],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    if cfg.n_fovs == 0 || cfg.n_repeats == 0 {
        return Err(AutofocusError::InvalidConfig("n_fovs and n_repeats must be >= 1".into()));
    }
    if !(cfg.start_spread >= 0.0) {
        return Err(AutofocusError::InvalidConfig(format!("start spread {}", cfg.start_spread)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(criteria.len());
    for &criterion in criteria {
        let mut times = Vec::new();
        let mut acqs = Vec::new();
        let mut area = 0.0;
        for fov in 0..cfg.n_fovs {
            for _ in 0..cfg.n_repeats {
                let mut stage = make_stage(fov)?;
                area = stage_area(&stage);
                let start = stage.focus_z() + rng.random_range(-1.0..=1.0) * cfg.start_spread;
                stage.move_to(start)?;
                let result = brent_search(&mut stage, criterion, &cfg.search)?;
                times.push(result.elapsed);
                acqs.push(result.acquisitions);
            }
        }
        rows.push(BenchRow::from_runs(criterion.name(), &times, &acqs, area));
    }
    Ok(rows)
}

fn stage_area(stage: &VirtualStage) -> f64 {
    use crate::stage::StageSource;
    match stage.source() {
        StageSource::Scene { scene, .. } => fov_area_mm2(scene.width(), scene.height(), scene.pixel_pitch()),
        StageSource::Stack(stack) => fov_area_mm2(stack.width(), stack.height(), stack.pixel_pitch()),
    }
}

pub const BENCH_CSV_HEADER: &str =
    "criterion,mean_time_s_per_mm2,std_time_s_per_mm2,mean_acquisitions,std_acquisitions";

pub fn format_bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label, r.mean_time_s_per_mm2, r.std_time_s_per_mm2, r.mean_acquisitions, r.std_acquisitions
        ));
    }
    out
}
