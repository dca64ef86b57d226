//! Alternating generator/discriminator training with periodic validation
//! and best-checkpoint selection by validation BerHu.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapfocus_imaging::metrics::{rmse, ssim, MsssimConfig};

use crate::adam::{Adam, AdamConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, NormMode, Pair, Stats};
use crate::error::{NetError, Result};
use crate::graph::Graph;
use crate::infer::forward_normalized;
use crate::loss::{berhu_value, loss_discriminator, loss_generator, BerhuC, LossTerms, LossWeights, Reduction};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub generator_updates: usize,
    pub discriminator_updates: usize,
    pub validation_every: usize,
    pub max_iterations: usize,
    /// Side of the random training crops.
    pub crop: usize,
    /// Random dihedral transform per crop.
    pub augment: bool,
    pub norm: NormMode,
    /// Iteration at which loss weights are balanced and then frozen.
    pub balance_at: Option<usize>,
    pub seed: u64,
    /// Where to write the model state if training hits a non-finite loss.
    pub diagnostic_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            lr_generator: 5e-4,
            lr_discriminator: 1e-6,
            generator_updates: 6,
            discriminator_updates: 3,
            validation_every: 50,
            max_iterations: 1000,
            crop: 32,
            augment: true,
            norm: NormMode::InputStats,
            balance_at: None,
            seed: 0,
            diagnostic_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.generator_updates == 0
            || self.discriminator_updates == 0
            || self.validation_every == 0
            || self.max_iterations == 0
            || self.crop == 0
        {
            return Err(NetError::Config("training counts must be at least 1".into()));
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(NetError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValStats {
    /// Mean BerHu on normalized images.
    pub berhu: f64,
    /// Mean single-scale SSIM of the de-normalized output against the target.
    pub ssim: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    /// Weighted generator loss of the last generator update.
    pub generator_loss: f64,
    pub terms: LossTerms,
    pub discriminator_loss: Option<f64>,
    pub validation: Option<ValStats>,
}

pub const LOG_CSV_HEADER: &str =
    "iteration,loss_generator,adversarial,structural,berhu,loss_discriminator,val_berhu,val_ssim,val_rmse";

pub fn format_log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_CSV_HEADER);
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.generator_loss,
            r.terms.adversarial,
            r.terms.structural,
            r.terms.berhu,
            opt(r.discriminator_loss),
            opt(r.validation.map(|v| v.berhu)),
            opt(r.validation.map(|v| v.ssim)),
            opt(r.validation.map(|v| v.rmse)),
        );
    }
    s
}

/// Generator plus everything needed to resume or audit training.
#[derive(Debug, Clone, PartialEq)]
pub struct RefocusModel {
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    pub adam_generator: Adam,
    pub adam_discriminator: Option<Adam>,
    pub weights: LossWeights,
    pub norm: NormMode,
    /// Iteration this state was taken at.
    pub iteration: usize,
    pub history: Vec<(usize, ValStats)>,
}

fn put_adam(c: &mut Checkpoint, key: &str, adam: &Adam, params: &crate::model::Params) {
    c.set(format!("{key}.step"), adam.step);
    c.set(format!("{key}.lr"), adam.config.lr);
    c.set(format!("{key}.beta1"), adam.config.beta1);
    c.set(format!("{key}.beta2"), adam.config.beta2);
    c.set(format!("{key}.eps"), adam.config.eps);
    for (((name, t), m), v) in params.iter().zip(&adam.first).zip(&adam.second) {
        c.push(format!("{key}.m/{name}"), Tensor::new(t.shape(), m.clone()).expect("moment shape"));
        c.push(format!("{key}.v/{name}"), Tensor::new(t.shape(), v.clone()).expect("moment shape"));
    }
}

fn get_adam(c: &Checkpoint, key: &str, params: &crate::model::Params) -> Result<Adam> {
    let config = AdamConfig {
        lr: c.parse(&format!("{key}.lr"))?,
        beta1: c.parse(&format!("{key}.beta1"))?,
        beta2: c.parse(&format!("{key}.beta2"))?,
        eps: c.parse(&format!("{key}.eps"))?,
    };
    let mut adam = Adam::new(config, params)?;
    adam.step = c.parse(&format!("{key}.step"))?;
    for (i, (name, _)) in params.iter().enumerate() {
        adam.first[i] = c.record(&format!("{key}.m/{name}"))?.data().to_vec();
        adam.second[i] = c.record(&format!("{key}.v/{name}"))?.data().to_vec();
    }
    Ok(adam)
}

impl RefocusModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set("kind", "refocus");
        let gc = &self.generator.config;
        c.set("generator.depth", gc.depth);
        c.set("generator.base_channels", gc.base_channels);
        c.set("generator.slope", gc.slope);
        c.set("weights.lambda", self.weights.lambda);
        c.set("weights.nu", self.weights.nu);
        c.set("weights.xi", self.weights.xi);
        c.set(
            "weights.berhu_c",
            match self.weights.berhu_c {
                BerhuC::Auto => "auto".to_string(),
                BerhuC::Fixed(v) => v.to_string(),
            },
        );
        c.set(
            "weights.berhu_reduction",
            match self.weights.berhu_reduction {
                Reduction::Sum => "sum",
                Reduction::Mean => "mean",
            },
        );
        c.set("norm", self.norm.name());
        c.set("iteration", self.iteration);
        let hist: Vec<String> = self
            .history
            .iter()
            .map(|(i, v)| format!("{i}:{}:{}:{}", v.berhu, v.ssim, v.rmse))
            .collect();
        c.set("history", hist.join(";"));
        c.push_params("generator", &self.generator.params);
        put_adam(&mut c, "adam.generator", &self.adam_generator, &self.generator.params);
        if let Some(d) = &self.discriminator {
            c.set("discriminator.blocks", d.config.blocks);
            c.set("discriminator.base_channels", d.config.base_channels);
            c.set("discriminator.slope", d.config.slope);
            c.set("discriminator.fc_init", d.config.fc_init);
            c.push_params("discriminator", &d.params);
            if let Some(a) = &self.adam_discriminator {
                put_adam(&mut c, "adam.discriminator", a, &d.params);
            }
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.get("kind")? != "refocus" {
            return Err(NetError::Format(format!("checkpoint kind {:?} is not refocus", c.get("kind")?)));
        }
        let gc = GeneratorConfig {
            depth: c.parse("generator.depth")?,
            base_channels: c.parse("generator.base_channels")?,
            slope: c.parse("generator.slope")?,
        };
        let mut generator = Generator::new(gc, 0)?;
        generator.params = c.read_params("generator", &generator.params)?;
        let adam_generator = get_adam(c, "adam.generator", &generator.params)?;
        let (discriminator, adam_discriminator) = if c.config.contains_key("discriminator.blocks") {
            let dc = DiscriminatorConfig {
                blocks: c.parse("discriminator.blocks")?,
                base_channels: c.parse("discriminator.base_channels")?,
                slope: c.parse("discriminator.slope")?,
                fc_init: c.parse("discriminator.fc_init")?,
            };
            let mut d = Discriminator::new(dc, 0)?;
            d.params = c.read_params("discriminator", &d.params)?;
            let a = if c.config.contains_key("adam.discriminator.step") {
                Some(get_adam(c, "adam.discriminator", &d.params)?)
            } else {
                None
            };
            (Some(d), a)
        } else {
            (None, None)
        };
        let berhu_c = match c.get("weights.berhu_c")? {
            "auto" => BerhuC::Auto,
            _ => BerhuC::Fixed(c.parse("weights.berhu_c")?),
        };
        let berhu_reduction = match c.get("weights.berhu_reduction")? {
            "sum" => Reduction::Sum,
            "mean" => Reduction::Mean,
            other => return Err(NetError::Format(format!("unknown reduction {other:?}"))),
        };
        let weights = LossWeights {
            lambda: c.parse("weights.lambda")?,
            nu: c.parse("weights.nu")?,
            xi: c.parse("weights.xi")?,
            berhu_c,
            berhu_reduction,
        };
        let mut history = Vec::new();
        for item in c.get("history")?.split(';').filter(|s| !s.is_empty()) {
            let f: Vec<&str> = item.split(':').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| NetError::Format(format!("bad history entry {item:?}")));
            if f.len() != 4 {
                return Err(NetError::Format(format!("bad history entry {item:?}")));
            }
            let it = f[0].parse().map_err(|_| NetError::Format(format!("bad history entry {item:?}")))?;
            history.push((
                it,
                ValStats {
                    berhu: num(f[1])?,
                    ssim: num(f[2])?,
                    rmse: num(f[3])?,
                },
            ));
        }
        Ok(Self {
            generator,
            discriminator,
            adam_generator,
            adam_discriminator,
            weights,
            norm: NormMode::from_name(c.get("norm")?)?,
            iteration: c.parse("iteration")?,
            history,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Validation metrics of `generator` over `pairs`. BerHu uses the fixed
/// threshold `c` in normalized units.
pub fn validate(generator: &Generator, pairs: &[Pair], norm: NormMode, c: f64) -> Result<ValStats> {
    let cfg = MsssimConfig::single_scale();
    let (mut bh, mut ss, mut rm) = (0.0, 0.0, 0.0);
    for p in pairs {
        let prepared = crate::data::prepare(p, norm)?;
        let pred = forward_normalized(generator, &prepared.input)?;
        bh += pred
            .data()
            .iter()
            .zip(prepared.target.data())
            .map(|(a, b)| berhu_value(a - b, c))
            .sum::<f64>()
            / pred.len() as f64;
        let out = Stats::of(&p.input).invert(&pred);
        ss += ssim(&out, &p.target, &cfg)?;
        rm += rmse(&out, &p.target)?;
    }
    let n = pairs.len() as f64;
    Ok(ValStats {
        berhu: bh / n,
        ssim: ss / n,
        rmse: rm / n,
    })
}

/// Fixed validation threshold: 10% of the std over all normalized targets.
pub fn validation_threshold(pairs: &[Pair], norm: NormMode) -> Result<f64> {
    let mut all = Vec::new();
    for p in pairs {
        all.extend_from_slice(crate::data::prepare(p, norm)?.target.data());
    }
    let t = Tensor::new([1, 1, 1, all.len()], all)?;
    Ok(BerhuC::Auto.resolve(&t))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// State at the iteration with the lowest validation BerHu.
    pub best: RefocusModel,
    /// State after the last iteration.
    pub last: RefocusModel,
    pub log: Vec<LogRow>,
}

pub fn train(
    train_pairs: &[Pair],
    val_pairs: &[Pair],
    cfg: &TrainConfig,
    weights: &LossWeights,
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    weights.validate()?;
    gen_cfg.check_size(cfg.crop, cfg.crop)?;
    if val_pairs.is_empty() {
        return Err(NetError::Config("validation set is empty".into()));
    }
    let data = Dataset::new(train_pairs, cfg.norm)?;
    if data.min_side() < cfg.crop {
        return Err(NetError::Config(format!("crop {} exceeds the smallest training image", cfg.crop)));
    }
    let val_c = validation_threshold(val_pairs, cfg.norm)?;
    let ms_cfg = MsssimConfig::for_size(cfg.crop, cfg.crop);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = Generator::new(gen_cfg.clone(), rng.random())?;
    let adversarial = weights.lambda > 0.0;
    let disc_seed: u64 = rng.random();
    let mut discriminator = if adversarial {
        Some(Discriminator::new(disc_cfg.clone(), disc_seed)?)
    } else {
        None
    };
    let mut adam_g = Adam::new(AdamConfig::with_lr(cfg.lr_generator), &generator.params)?;
    let mut adam_d = match &discriminator {
        Some(d) => Some(Adam::new(AdamConfig::with_lr(cfg.lr_discriminator), &d.params)?),
        None => None,
    };
    let mut w = *weights;
    let mut log = Vec::with_capacity(cfg.max_iterations);
    let mut history = Vec::new();
    let mut best: Option<RefocusModel> = None;
    let mut best_berhu = f64::INFINITY;

    let snapshot = |generator: &Generator,
                    discriminator: &Option<Discriminator>,
                    adam_g: &Adam,
                    adam_d: &Option<Adam>,
                    w: &LossWeights,
                    iteration: usize,
                    history: &Vec<(usize, ValStats)>| RefocusModel {
        generator: generator.clone(),
        discriminator: discriminator.clone(),
        adam_generator: adam_g.clone(),
        adam_discriminator: adam_d.clone(),
        weights: *w,
        norm: cfg.norm,
        iteration,
        history: history.clone(),
    };

    for iteration in 1..=cfg.max_iterations {
        let mut sum_terms = LossTerms::default();
        let mut last_total = 0.0;
        let mut last_terms = LossTerms::default();
        for _ in 0..cfg.generator_updates {
            let (x, y, _) = data.sample(&mut rng, cfg.batch_size, cfg.crop, cfg.augment)?;
            let mut g = Graph::new();
            let gb = generator.bind(&mut g, true);
            let xv = g.constant(x);
            let yv = g.constant(y);
            let pred = generator.forward(&mut g, &gb, xv)?;
            let d_fake = match &discriminator {
                Some(d) if w.lambda > 0.0 => {
                    let db = d.bind(&mut g, false);
                    Some(d.forward(&mut g, &db, pred)?)
                }
                _ => None,
            };
            let loss = loss_generator(&mut g, pred, yv, d_fake, &w, &ms_cfg)?;
            let total = g.scalar(loss.total);
            if !total.is_finite() {
                let state = snapshot(&generator, &discriminator, &adam_g, &adam_d, &w, iteration, &history);
                return Err(abort(cfg, &state, iteration, format!("generator loss {total}")));
            }
            let grads = g.backward(loss.total)?;
            adam_g.update_bound(&mut generator.params, &gb, &grads)?;
            sum_terms.adversarial += loss.terms.adversarial;
            sum_terms.structural += loss.terms.structural;
            sum_terms.berhu += loss.terms.berhu;
            last_total = total;
            last_terms = loss.terms;
        }
        let mut last_d = None;
        if let (Some(d), Some(ad)) = (&mut discriminator, &mut adam_d) {
            for _ in 0..cfg.discriminator_updates {
                let (x, y, _) = data.sample(&mut rng, cfg.batch_size, cfg.crop, cfg.augment)?;
                let mut g = Graph::new();
                let gb = generator.bind(&mut g, false);
                let db = d.bind(&mut g, true);
                let xv = g.constant(x);
                let yv = g.constant(y);
                let pred = generator.forward(&mut g, &gb, xv)?;
                let df = d.forward(&mut g, &db, pred)?;
                let dr = d.forward(&mut g, &db, yv)?;
                let l = loss_discriminator(&mut g, df, dr)?;
                let v = g.scalar(l);
                if !v.is_finite() {
                    return Err(NetError::NonFinite {
                        iteration,
                        detail: format!("discriminator loss {v}"),
                    });
                }
                let grads = g.backward(l)?;
                ad.update_bound(&mut d.params, &db, &grads)?;
                last_d = Some(v);
            }
        }
        if cfg.balance_at == Some(iteration) {
            let k = cfg.generator_updates as f64;
            let mean = LossTerms {
                adversarial: sum_terms.adversarial / k,
                structural: sum_terms.structural / k,
                berhu: sum_terms.berhu / k,
            };
            w = w.balanced(&mean);
        }
        let validation = if iteration % cfg.validation_every == 0 || iteration == cfg.max_iterations {
            let v = validate(&generator, val_pairs, cfg.norm, val_c)?;
            history.push((iteration, v));
            if best.is_none() || v.berhu < best_berhu {
                best_berhu = v.berhu;
                best = Some(snapshot(&generator, &discriminator, &adam_g, &adam_d, &w, iteration, &history));
            }
            Some(v)
        } else {
            None
        };
        log.push(LogRow {
            iteration,
            generator_loss: last_total,
            terms: last_terms,
            discriminator_loss: last_d,
            validation,
        });
    }
    let last = snapshot(&generator, &discriminator, &adam_g, &adam_d, &w, cfg.max_iterations, &history);
    let mut best = best.expect("final iteration is always validated");
    best.history = history;
    Ok(TrainOutput { best, last, log })
}

fn abort(cfg: &TrainConfig, state: &RefocusModel, iteration: usize, detail: String) -> NetError {
    let mut detail = detail;
    if let Some(path) = &cfg.diagnostic_path {
        match state.save(path) {
            Ok(()) => detail.push_str(&format!("; state written to {}", path.display())),
            Err(e) => detail.push_str(&format!("; diagnostic save failed: {e}")),
        }
    }
    NetError::NonFinite { iteration, detail }
}
