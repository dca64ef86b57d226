//! Training of the defocus-map decoder on top of a frozen generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapfocus_imaging::transform::dihedral;
use snapfocus_imaging::Image;

use crate::adam::{Adam, AdamConfig};
use crate::checkpoint::Checkpoint;
use crate::data::Stats;
use crate::error::{NetError, Result};
use crate::graph::Graph;
use crate::model::{Decoder, Generator, GeneratorConfig};
use crate::tensor::Tensor;

/// An image under uniform defocus `dz`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmSample {
    pub image: Image,
    pub dz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTrainConfig {
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            iterations: 2000,
            batch_size: 5,
            crop: 32,
            augment: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub decoder: Decoder,
    pub adam: Adam,
    pub iteration: usize,
    /// Training loss per iteration.
    pub losses: Vec<f64>,
}

impl DecoderModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set("kind", "decoder");
        let gc = &self.decoder.config;
        c.set("generator.depth", gc.depth);
        c.set("generator.base_channels", gc.base_channels);
        c.set("generator.slope", gc.slope);
        c.set("iteration", self.iteration);
        c.set("adam.step", self.adam.step);
        c.set("adam.lr", self.adam.config.lr);
        c.push_params("decoder", &self.decoder.params);
        for ((name, t), (m, v)) in self.decoder.params.iter().zip(self.adam.first.iter().zip(&self.adam.second)) {
            c.push(format!("adam.m/{name}"), Tensor::new(t.shape(), m.clone()).expect("moment shape"));
            c.push(format!("adam.v/{name}"), Tensor::new(t.shape(), v.clone()).expect("moment shape"));
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.get("kind")? != "decoder" {
            return Err(NetError::Format(format!("checkpoint kind {:?} is not decoder", c.get("kind")?)));
        }
        let gc = GeneratorConfig {
            depth: c.parse("generator.depth")?,
            base_channels: c.parse("generator.base_channels")?,
            slope: c.parse("generator.slope")?,
        };
        let mut decoder = Decoder::new(gc, 0)?;
        decoder.params = c.read_params("decoder", &decoder.params)?;
        let mut adam = Adam::new(AdamConfig::with_lr(c.parse("adam.lr")?), &decoder.params)?;
        adam.step = c.parse("adam.step")?;
        for (i, (name, _)) in decoder.params.iter().enumerate() {
            adam.first[i] = c.record(&format!("adam.m/{name}"))?.data().to_vec();
            adam.second[i] = c.record(&format!("adam.v/{name}"))?.data().to_vec();
        }
        Ok(Self {
            decoder,
            adam,
            iteration: c.parse("iteration")?,
            losses: Vec::new(),
        })
    }
}

/// Fits a decoder so that `decoder(encoder(x))` reproduces a constant map of
/// each sample's `dz`, with loss `Σ (map − dz)²`. The generator only
/// supplies features; it is bound as constants and never modified.
pub fn decoder_train(generator: &Generator, samples: &[DpmSample], cfg: &DecoderTrainConfig) -> Result<DecoderModel> {
    if samples.is_empty() || cfg.iterations == 0 || cfg.batch_size == 0 {
        return Err(NetError::Config("decoder training needs samples, iterations and a batch size".into()));
    }
    generator.config.check_size(cfg.crop, cfg.crop)?;
    let normalized: Vec<Image> = samples.iter().map(|s| Stats::of(&s.image).apply(&s.image)).collect();
    if normalized.iter().any(|i| i.width() < cfg.crop || i.height() < cfg.crop) {
        return Err(NetError::Config(format!("crop {} exceeds a training image", cfg.crop)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut decoder = Decoder::new(generator.config.clone(), rng.random())?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &decoder.params)?;
    let mut losses = Vec::with_capacity(cfg.iterations);
    let c = cfg.crop;
    for _ in 0..cfg.iterations {
        let (mut crops, mut target) = (Vec::new(), Vec::with_capacity(cfg.batch_size * c * c));
        for _ in 0..cfg.batch_size {
            let k = rng.random_range(0..samples.len());
            let img = &normalized[k];
            let x0 = rng.random_range(0..=img.width() - c);
            let y0 = rng.random_range(0..=img.height() - c);
            let t = if cfg.augment { rng.random_range(0..8) } else { 0 };
            crops.push(dihedral(&img.crop(x0, y0, c, c)?, t)?);
            target.extend(std::iter::repeat_n(samples[k].dz, c * c));
        }
        let refs: Vec<&Image> = crops.iter().collect();
        let mut g = Graph::new();
        let gb = generator.bind(&mut g, false);
        let db = decoder.bind(&mut g, true);
        let x = g.constant(Tensor::from_images(&refs)?);
        let y = g.constant(Tensor::new([cfg.batch_size, 1, c, c], target)?);
        let f = generator.encode(&mut g, &gb, x)?;
        let out = decoder.forward(&mut g, &db, &f)?;
        let d = g.sub(out, y)?;
        let sq = g.square(d)?;
        let loss = g.sum(sq)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(NetError::NonFinite {
                iteration: losses.len() + 1,
                detail: format!("decoder loss {value}"),
            });
        }
        let grads = g.backward(loss)?;
        adam.update_bound(&mut decoder.params, &db, &grads)?;
        losses.push(value);
    }
    Ok(DecoderModel {
        decoder,
        adam,
        iteration: cfg.iterations,
        losses,
    })
}
