use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use snapfocus_autofocus::{brent_search, focus_curve, FocusCriterion, SearchConfig, VirtualStage};
use snapfocus_bench::benchrun::{bench_run, format_report_csv, format_report_summary, BenchInputs};
use snapfocus_bench::dataset::{dataset_build, load_pairs, load_split};
use snapfocus_bench::eval::{
    eval_curves, format_curves_csv, format_range_csv, format_tilt_csv, format_tilt_summary, range_tradeoff,
    tilt_report, TiltConfig,
};
use snapfocus_bench::pipeline::{refocus_stack, train_decoder, train_refocus};
use snapfocus_bench::{BenchError, PipelineConfig};
use snapfocus_deconv::{cropped_metrics, deconvolve, Algorithm, DeconvConfig};
use snapfocus_imaging::io::{load_rf32, load_stack, save_rf32, save_stack};
use snapfocus_net::checkpoint::Checkpoint;
use snapfocus_net::dpm::DecoderModel;
use snapfocus_net::infer::{decoder_infer, infer};
use snapfocus_net::train::{format_log_csv, RefocusModel};
use snapfocus_optics::{psf_kernel, synth_scene, synth_stack};
use snapfocus_psf::{detect_beads, format_fwhm_csv, fwhm_vs_dz, DetectConfig};

#[derive(Parser)]
#[command(name = "snapfocus", version, about = "Single-shot refocusing and focus-search experiments")]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel sections; 0 uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic specimens.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Training, validation and test splits.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train the refocusing generator on a built dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Refocus one RF32 image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Defocus-map decoder on top of a frozen generator.
    #[command(subcommand)]
    Decoder(DecoderCmd),
    /// Stage-scanning focus search on a saved stack.
    #[command(subcommand)]
    Focus(FocusCmd),
    /// Non-blind deconvolution with the model PSF at a known defocus.
    Deconv(DeconvArgs),
    /// Bead PSF analysis.
    #[command(subcommand)]
    Psf(PsfCmd),
    /// Held-out evaluation reports.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Timing and acquisition-count comparison.
    Bench {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// One in-focus scene.
    Scene,
    /// A defocus stack over the dataset range.
    Stack,
}

#[derive(Subcommand)]
enum DatasetCmd {
    Build,
}

#[derive(Subcommand)]
enum DecoderCmd {
    Train {
        /// Generator checkpoint; kept frozen.
        #[arg(long)]
        model: PathBuf,
    },
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct FocusArgs {
    /// Stack manifest.
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value = "VOL4")]
    criterion: String,
}

#[derive(Subcommand)]
enum FocusCmd {
    Search {
        #[command(flatten)]
        common: FocusArgs,
        /// Start height relative to the stack's reference plane.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        start: f64,
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
    },
    /// Criterion value at every plane.
    Curve {
        #[command(flatten)]
        common: FocusArgs,
    },
}

#[derive(Args)]
struct DeconvArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "rl")]
    algo: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Border excluded from the metrics.
    #[arg(long, default_value_t = 10)]
    crop: usize,
    /// Defocus whose model PSF is deconvolved.
    #[arg(long, allow_hyphen_values = true)]
    psf: f64,
    /// In-focus image for SSIM/RMSE reporting.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PsfCmd {
    /// Lateral FWHM versus defocus, optionally also through a model.
    Analyze {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// SSIM/RMSE versus defocus on the test split.
    Curves {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Trained range; defaults to the configured dataset range.
        #[arg(long)]
        range: Option<f64>,
    },
    /// Several models on one test sweep; each `--model` is `PATH:RANGE`.
    Range {
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Row-wise sharpness on tilted samples.
    Tilt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1.5, allow_hyphen_values = true)]
        angle: f64,
        #[arg(long, default_value_t = 6)]
        fovs: usize,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.dataset.seed = s;
        cfg.train.seed = s;
        cfg.decoder.seed = s;
        cfg.bench.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.bench.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> anyhow::Result<RefocusModel> {
    RefocusModel::load(path)
        .map_err(BenchError::from)
        .with_context(|| format!("loading {}", path.display()))
}

fn criterion(name: &str) -> anyhow::Result<FocusCriterion> {
    Ok(name.parse::<FocusCriterion>().map_err(BenchError::from)?)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.toml"), cfg.to_toml())?;

    match &cli.command {
        Command::Synth(SynthCmd::Scene) => {
            let scene = synth_scene(&cfg.scene.spec(cfg.dataset.seed)?).map_err(BenchError::from)?;
            save_rf32(&scene, out.join("scene.rf32")).map_err(BenchError::from)?;
        }
        Command::Synth(SynthCmd::Stack) => {
            let d = &cfg.dataset;
            let stack = synth_stack(
                &cfg.scene.spec(d.seed)?,
                &cfg.psf.model()?,
                -d.range,
                d.range,
                d.z_step,
                &cfg.noise.model(),
            )
            .map_err(BenchError::from)?;
            let manifest = save_stack(&stack, out).map_err(BenchError::from)?;
            println!("{}", manifest.display());
        }
        Command::Dataset(DatasetCmd::Build) => {
            let split = dataset_build(&cfg, out)?;
            println!(
                "train {} validation {} test {} FOVs",
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
        }
        Command::Train { data } => {
            let split = load_split(data)?;
            let train_pairs = load_pairs(data, &split.train)?;
            let val_pairs = load_pairs(data, &split.validation)?;
            let result = train_refocus(&cfg, &train_pairs, &val_pairs, Some(out.join("diagnostic.ckpt")))?;
            result.best.save(out.join("best.ckpt")).map_err(BenchError::from)?;
            result.last.save(out.join("last.ckpt")).map_err(BenchError::from)?;
            write(&out.join("train_log.csv"), format_log_csv(&result.log))?;
            println!("best iteration {}", result.best.iteration);
        }
        Command::Infer { model, input } => {
            let model = load_model(model)?;
            let image = load_rf32(input).map_err(BenchError::from)?;
            let output = infer(&model.generator, &image).map_err(BenchError::from)?;
            save_rf32(&output, out.join("refocused.rf32")).map_err(BenchError::from)?;
        }
        Command::Decoder(DecoderCmd::Train { model }) => {
            let model = load_model(model)?;
            let trained = train_decoder(&cfg, &model.generator)?;
            trained.to_checkpoint().save(out.join("decoder.ckpt")).map_err(BenchError::from)?;
            println!("final loss {:.6}", trained.losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Decoder(DecoderCmd::Infer { model, decoder, input }) => {
            let model = load_model(model)?;
            let dec = Checkpoint::load(decoder)
                .and_then(|c| DecoderModel::from_checkpoint(&c))
                .map_err(BenchError::from)?;
            let image = load_rf32(input).map_err(BenchError::from)?;
            let est = decoder_infer(&model.generator, &dec.decoder, &image).map_err(BenchError::from)?;
            save_rf32(&est.map, out.join("dpm.rf32")).map_err(BenchError::from)?;
            let mut csv = String::from("row,dz_mean,dz_std\n");
            for (i, r) in est.row_profile().iter().enumerate() {
                csv.push_str(&format!("{i},{},{}\n", r.mean, r.std));
            }
            write(&out.join("dpm_rows.csv"), csv)?;
            println!("mean {:.4} row_slope {:.6}", est.mean(), est.row_slope());
        }
        Command::Focus(FocusCmd::Search { common, start, tolerance }) => {
            let stack = load_stack(&common.stack).map_err(BenchError::from)?;
            let zs = stack.dz_values();
            let (lo, hi) = (zs[0], zs[zs.len() - 1]);
            let mut stage = VirtualStage::from_stack(stack.clone(), 0.0);
            stage.move_to(*start).map_err(BenchError::from)?;
            let search = SearchConfig {
                search_range: (start - lo).min(hi - start),
                tolerance: *tolerance,
                ..Default::default()
            };
            let r = brent_search(&mut stage, criterion(&common.criterion)?, &search).map_err(BenchError::from)?;
            let mut csv = String::from("step,z,value\n");
            for (i, (z, v)) in r.trace.iter().enumerate() {
                csv.push_str(&format!("{i},{z},{v}\n"));
            }
            write(&out.join("search_trace.csv"), csv)?;
            println!("z_star {:.4} acquisitions {}", r.z_star, r.acquisitions);
        }
        Command::Focus(FocusCmd::Curve { common }) => {
            let stack = load_stack(&common.stack).map_err(BenchError::from)?;
            let zs = stack.dz_values().to_vec();
            let mut stage = VirtualStage::from_stack(stack, 0.0);
            let c = criterion(&common.criterion)?;
            let curve = focus_curve(&mut stage, c, &zs).map_err(BenchError::from)?;
            let mut csv = format!("z,{}\n", c.name());
            for (z, v) in curve {
                csv.push_str(&format!("{z},{v}\n"));
            }
            write(&out.join("focus_curve.csv"), csv)?;
        }
        Command::Deconv(a) => {
            let image = load_rf32(&a.input).map_err(BenchError::from)?;
            let dc = DeconvConfig {
                algorithm: a.algo.parse::<Algorithm>().map_err(BenchError::from)?,
                iterations: a.iters,
                step_gamma: a.gamma,
                boundary_crop: a.crop,
            };
            let kernel = psf_kernel(&cfg.psf.model()?, a.psf);
            let result = deconvolve(&image, &kernel, &dc).map_err(BenchError::from)?;
            save_rf32(&result, out.join("deconvolved.rf32")).map_err(BenchError::from)?;
            if let Some(t) = &a.truth {
                let truth = load_rf32(t).map_err(BenchError::from)?;
                let (s_in, r_in) = cropped_metrics(&image, &truth, a.crop).map_err(BenchError::from)?;
                let (s_out, r_out) = cropped_metrics(&result, &truth, a.crop).map_err(BenchError::from)?;
                let text = format!("ssim_input {s_in}\nssim_output {s_out}\nrmse_input {r_in}\nrmse_output {r_out}\n");
                write(&out.join("deconv_metrics.txt"), &text)?;
                print!("{text}");
            }
        }
        Command::Psf(PsfCmd::Analyze { stack, model }) => {
            let stack = load_stack(stack).map_err(BenchError::from)?;
            let detections = detect_beads(&stack, &DetectConfig::default()).map_err(BenchError::from)?;
            let output = match model {
                Some(m) => refocus_stack(&load_model(m)?.generator, &stack)?,
                None => stack.clone(),
            };
            let (a, b) = fwhm_vs_dz(&stack, &output, &detections).map_err(BenchError::from)?;
            write(&out.join("fwhm.csv"), format_fwhm_csv(&a, &b))?;
            println!("{} beads", detections.len());
        }
        Command::Eval(EvalCmd::Curves { model, data, range }) => {
            let model = load_model(model)?;
            let split = load_split(data)?;
            let pairs = load_pairs(data, &split.test)?;
            let rows = eval_curves(&model.generator, &pairs, range.unwrap_or(cfg.dataset.range))?;
            write(&out.join("curves.csv"), format_curves_csv(&rows))?;
        }
        Command::Eval(EvalCmd::Range { models, data }) => {
            let mut loaded = Vec::new();
            for spec in models {
                let Some((path, range)) = spec.rsplit_once(':') else {
                    bail!(BenchError::Config(format!("expected PATH:RANGE, got {spec:?}")));
                };
                let range: f64 = range
                    .parse()
                    .map_err(|_| BenchError::Config(format!("bad range in {spec:?}")))?;
                loaded.push((format!("pm{range}"), range, load_model(Path::new(path))?));
            }
            let split = load_split(data)?;
            let pairs = load_pairs(data, &split.test)?;
            let refs: Vec<(&str, f64, _)> = loaded.iter().map(|(l, r, m)| (l.as_str(), *r, &m.generator)).collect();
            let curves = range_tradeoff(&refs, &pairs)?;
            write(&out.join("range.csv"), format_range_csv(&curves)?)?;
        }
        Command::Eval(EvalCmd::Tilt { model, angle, fovs }) => {
            let model = load_model(model)?;
            let tc = TiltConfig {
                angle_deg: *angle,
                fovs: *fovs,
                seed: cfg.dataset.seed,
                correlation_length: cfg.scene.correlation_length,
                ..Default::default()
            };
            let report = tilt_report(&model.generator, &tc, &cfg.psf.model()?, &cfg.noise.model())?;
            write(&out.join("tilt.csv"), format_tilt_csv(&report))?;
            let summary = format_tilt_summary(&report);
            write(&out.join("tilt_summary.txt"), &summary)?;
            print!("{summary}");
        }
        Command::Bench { model } => {
            let model = load_model(model)?;
            let inputs = BenchInputs {
                generator: &model.generator,
                psf: cfg.psf.model()?,
                noise: cfg.noise.model(),
                pixel_pitch: cfg.scene.pixel_pitch,
                correlation_length: cfg.scene.correlation_length,
            };
            let report = bench_run(&inputs, &cfg.bench)?;
            let csv = format_report_csv(&report);
            write(&out.join("bench.csv"), &csv)?;
            write(&out.join("bench_environment.txt"), format_report_summary(&report))?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<BenchError>())
        .map(BenchError::exit_code)
        .unwrap_or(3)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
