//! Throughput comparison of stage-scanning focus search against single-shot
//! refocusing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use snapfocus_autofocus::bench::{fov_area_mm2, mean_std};
use snapfocus_autofocus::{brent_search, FocusCriterion, SearchConfig, VirtualStage};
use snapfocus_imaging::Image;
use snapfocus_net::infer::infer;
use snapfocus_net::model::Generator;
use snapfocus_optics::seed::derive_seed;
use snapfocus_optics::{synth_scene, NoiseModel, PsfModel, SceneSpec};

use crate::config::BenchSection;
use crate::error::{BenchError, Result};

/// Compute-only and total times are wall-clock and vary between runs; the
/// acquisition columns are deterministic for a fixed seed.
pub const BENCH_REPORT_CSV_HEADER: &str = "method,runs,threads,latency_s,mean_acquisitions,std_acquisitions,mean_compute_s,std_compute_s,mean_total_s,std_total_s,mean_total_s_per_mm2,std_total_s_per_mm2";

pub const SINGLE_SHOT_CPU: &str = "single-shot (1 thread)";
pub const SINGLE_SHOT_PARALLEL: &str = "single-shot (parallel)";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub runs: usize,
    pub threads: usize,
    pub latency_s: f64,
    pub acquisitions: (f64, f64),
    /// Per-FOV processing time without acquisition latency.
    pub compute_s: (f64, f64),
    /// Per-FOV time including `acquisitions * latency_s`.
    pub total_s: (f64, f64),
    pub total_s_per_mm2: (f64, f64),
}

impl ReportRow {
    fn from_runs(method: &str, threads: usize, latency: f64, acq: &[usize], compute: &[f64], area_mm2: f64) -> Self {
        let acq_f: Vec<f64> = acq.iter().map(|&a| a as f64).collect();
        let total: Vec<f64> = compute.iter().zip(&acq_f).map(|(c, a)| c + a * latency).collect();
        let per_mm2: Vec<f64> = total.iter().map(|t| t / area_mm2).collect();
        Self {
            method: method.to_string(),
            runs: acq.len(),
            threads,
            latency_s: latency,
            acquisitions: mean_std(&acq_f),
            compute_s: mean_std(compute),
            total_s: mean_std(&total),
            total_s_per_mm2: mean_std(&per_mm2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
    pub fov_width: usize,
    pub fov_height: usize,
    pub fov_mm2: f64,
    pub parallel_threads: usize,
}

/// Everything the benchmark needs besides its settings.
pub struct BenchInputs<'a> {
    pub generator: &'a Generator,
    pub psf: PsfModel,
    pub noise: NoiseModel,
    pub pixel_pitch: f64,
    pub correlation_length: f64,
}

fn scene(inputs: &BenchInputs, cfg: &BenchSection, fov: usize) -> Result<Image> {
    let mut spec = SceneSpec::texture(inputs.correlation_length, cfg.fov_size, cfg.fov_size, derive_seed(cfg.seed, fov as u64));
    spec.pixel_pitch = inputs.pixel_pitch;
    Ok(synth_scene(&spec)?)
}

/// Four focus-search rows (one per criterion) and two single-shot rows.
///
/// Every run starts from a height drawn uniformly within `start_spread` of
/// focus. Focus-search rows acquire until Brent's method converges; the
/// single-shot rows acquire once at the start height and refocus with the
/// generator. The parallel row processes all captures on a thread pool and
/// reports wall time divided by the number of captures.
pub fn bench_run(inputs: &BenchInputs, cfg: &BenchSection) -> Result<BenchReport> {
    if cfg.fovs == 0 || cfg.repeats == 0 {
        return Err(BenchError::Config("bench needs at least one FOV and one repeat".into()));
    }
    let search = SearchConfig {
        search_range: cfg.search_range,
        tolerance: cfg.tolerance,
        ..Default::default()
    };
    let half_travel = cfg.start_spread + cfg.search_range;
    let scenes = (0..cfg.fovs).map(|f| scene(inputs, cfg, f)).collect::<Result<Vec<_>>>()?;
    let make_stage = |fov: usize, run: u64| -> Result<VirtualStage> {
        Ok(VirtualStage::from_scene(scenes[fov].clone(), inputs.psf, 0.0, half_travel)?
            .with_noise(inputs.noise, derive_seed(cfg.seed ^ 0xACC, run))
            .with_latency(cfg.latency_s)?)
    };
    let area = fov_area_mm2(cfg.fov_size, cfg.fov_size, inputs.pixel_pitch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<(usize, f64)> = (0..cfg.fovs)
        .flat_map(|f| (0..cfg.repeats).map(move |_| f))
        .map(|f| (f, rng.random_range(-1.0..=1.0) * cfg.start_spread))
        .collect();

    let mut rows = Vec::with_capacity(6);
    for criterion in FocusCriterion::ALL {
        let (mut acq, mut compute) = (Vec::new(), Vec::new());
        for (run, &(fov, z0)) in starts.iter().enumerate() {
            let mut stage = make_stage(fov, run as u64)?;
            stage.move_to(z0)?;
            let r = brent_search(&mut stage, criterion, &search)?;
            acq.push(r.acquisitions);
            compute.push(r.elapsed - stage.simulated_time());
        }
        rows.push(ReportRow::from_runs(criterion.name(), 1, cfg.latency_s, &acq, &compute, area));
    }

    let mut captures = Vec::with_capacity(starts.len());
    let mut acq = Vec::with_capacity(starts.len());
    for (run, &(fov, z0)) in starts.iter().enumerate() {
        let mut stage = make_stage(fov, run as u64)?;
        captures.push(stage.acquire_at(z0)?);
        acq.push(stage.acquisition_count());
    }
    let mut compute = Vec::with_capacity(captures.len());
    for image in &captures {
        let t = Instant::now();
        infer(inputs.generator, image)?;
        compute.push(t.elapsed().as_secs_f64());
    }
    rows.push(ReportRow::from_runs(SINGLE_SHOT_CPU, 1, cfg.latency_s, &acq, &compute, area));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let t = Instant::now();
    pool.install(|| captures.par_iter().map(|img| infer(inputs.generator, img)).collect::<std::result::Result<Vec<_>, _>>())?;
    let per_capture = t.elapsed().as_secs_f64() / captures.len() as f64;
    let compute = vec![per_capture; captures.len()];
    rows.push(ReportRow::from_runs(SINGLE_SHOT_PARALLEL, threads, cfg.latency_s, &acq, &compute, area));

    Ok(BenchReport {
        rows,
        fov_width: cfg.fov_size,
        fov_height: cfg.fov_size,
        fov_mm2: area,
        parallel_threads: threads,
    })
}

pub fn format_report_csv(report: &BenchReport) -> String {
    let mut out = format!("{BENCH_REPORT_CSV_HEADER}\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.runs,
            r.threads,
            r.latency_s,
            r.acquisitions.0,
            r.acquisitions.1,
            r.compute_s.0,
            r.compute_s.1,
            r.total_s.0,
            r.total_s.1,
            r.total_s_per_mm2.0,
            r.total_s_per_mm2.1
        ));
    }
    out
}

/// Plain-text environment echo accompanying the CSV.
pub fn format_report_summary(report: &BenchReport) -> String {
    format!(
        "fov {}x{} px ({:.6} mm2)\nparallel_threads {}\nlogical_cpus {}\nos {}\narch {}\n",
        report.fov_width,
        report.fov_height,
        report.fov_mm2,
        report.parallel_threads,
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}
