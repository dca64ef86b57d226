//! Glue between configuration and the training entry points.

use std::path::PathBuf;

use snapfocus_imaging::ZStack;
use snapfocus_net::data::Pair;
use snapfocus_net::dpm::{decoder_train, DecoderModel, DecoderTrainConfig, DpmSample};
use snapfocus_net::infer::infer;
use snapfocus_net::model::Generator;
use snapfocus_net::train::{train, TrainConfig, TrainOutput};
use snapfocus_optics::seed::derive_seed;
use snapfocus_optics::{add_noise, defocus_uniform, synth_scene};

use crate::config::PipelineConfig;
use crate::error::{BenchError, Result};

/// `diagnostic` receives the model state if training hits a non-finite loss.
pub fn train_refocus(
    cfg: &PipelineConfig,
    train_pairs: &[Pair],
    val_pairs: &[Pair],
    diagnostic: Option<PathBuf>,
) -> Result<TrainOutput> {
    let t = &cfg.train;
    let tc = TrainConfig {
        diagnostic_path: diagnostic,
        ..t.train_config()?
    };
    Ok(train(
        train_pairs,
        val_pairs,
        &tc,
        &t.weights(),
        &t.generator(),
        &t.discriminator(),
    )?)
}

/// Uniformly defocused captures over `0..=range` on the decoder's own scenes.
pub fn decoder_samples(cfg: &PipelineConfig) -> Result<Vec<DpmSample>> {
    let d = &cfg.decoder;
    if !(d.range > 0.0 && d.z_step > 0.0) || d.fovs == 0 {
        return Err(BenchError::Config("decoder range, z_step and fovs must be positive".into()));
    }
    let psf = cfg.psf.model()?;
    let noise = cfg.noise.model();
    let steps = (d.range / d.z_step).round() as usize;
    let mut samples = Vec::with_capacity(d.fovs * (steps + 1));
    for f in 0..d.fovs {
        let seed = derive_seed(d.seed, f as u64);
        let scene = synth_scene(&cfg.scene.spec(seed)?)?;
        for k in 0..=steps {
            let dz = k as f64 * d.z_step;
            let blurred = defocus_uniform(&scene, &psf, dz)?;
            samples.push(DpmSample {
                image: add_noise(&blurred, &noise, derive_seed(seed, k as u64 + 1))?,
                dz,
            });
        }
    }
    Ok(samples)
}

pub fn decoder_config(cfg: &PipelineConfig) -> DecoderTrainConfig {
    let d = &cfg.decoder;
    DecoderTrainConfig {
        lr: d.lr,
        iterations: d.iterations,
        batch_size: d.batch_size,
        crop: d.crop,
        augment: true,
        seed: d.seed,
    }
}

pub fn train_decoder(cfg: &PipelineConfig, generator: &Generator) -> Result<DecoderModel> {
    Ok(decoder_train(generator, &decoder_samples(cfg)?, &decoder_config(cfg))?)
}

/// Run the generator on every plane of a stack.
pub fn refocus_stack(generator: &Generator, stack: &ZStack) -> Result<ZStack> {
    let planes = stack.planes().iter().map(|p| infer(generator, p)).collect::<std::result::Result<Vec<_>, _>>()?;
    let out = ZStack::new(planes, stack.dz_values().to_vec())?;
    Ok(match stack.reference_index() {
        Some(i) => out.with_reference(i)?,
        None => out,
    })
}
