use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapfocus_imaging::filter::{convolve_separable_replicate, gaussian_kernel_1d};
use snapfocus_imaging::Image;
use snapfocus_net::adam::{Adam, AdamConfig};
use snapfocus_net::checkpoint::Checkpoint;
use snapfocus_net::data::Pair;
use snapfocus_net::dpm::{decoder_train, DecoderModel, DecoderTrainConfig, DpmSample};
use snapfocus_net::infer::{decoder_infer, infer};
use snapfocus_net::loss::LossWeights;
use snapfocus_net::model::{DiscriminatorConfig, GeneratorConfig};
use snapfocus_net::train::{format_log_csv, train, RefocusModel, TrainConfig, LOG_CSV_HEADER};
use snapfocus_net::NetError;

fn blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel_1d(sigma, (3.0 * sigma).ceil() as usize);
    convolve_separable_replicate(img, &k, &k).unwrap()
}

fn pair(seed: u64, side: usize, sigma: f64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = Image::from_fn(side, side, 1.0, |_, _| rng.random::<f64>()).unwrap();
    let target = blur(&texture, 0.7);
    Pair {
        input: blur(&target, sigma),
        target,
        dz: sigma,
    }
}

fn small_gen() -> GeneratorConfig {
    GeneratorConfig {
        depth: 2,
        base_channels: 4,
        slope: 0.1,
    }
}

fn quick_cfg(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        crop: 16,
        max_iterations: iterations,
        validation_every: 5,
        generator_updates: 2,
        discriminator_updates: 1,
        seed,
        ..Default::default()
    }
}

#[test]
fn single_pair_overfit_drops_berhu_hundredfold() {
    let p = pair(1, 16, 1.5);
    let cfg = TrainConfig {
        batch_size: 1,
        crop: 16,
        augment: false,
        max_iterations: 2000,
        validation_every: 500,
        seed: 3,
        ..Default::default()
    };
    let out = train(&[p.clone()], &[p], &cfg, &LossWeights::without_adversary(), &small_gen(), &DiscriminatorConfig::default()).unwrap();
    let first = out.log[0].terms.berhu;
    let best = out.log.iter().map(|r| r.terms.berhu).fold(f64::INFINITY, f64::min);
    assert!(first / best >= 100.0, "BerHu {first} -> {best}");
}

#[test]
fn training_is_bit_deterministic() {
    let pairs: Vec<Pair> = (0..4).map(|s| pair(s, 24, 1.2)).collect();
    let run = || {
        let w = LossWeights::default();
        let out = train(&pairs[..3], &pairs[3..], &quick_cfg(6, 9), &w, &small_gen(), &DiscriminatorConfig::default()).unwrap();
        out.last.to_checkpoint().to_bytes().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_reproduces_inference() {
    let pairs: Vec<Pair> = (0..3).map(|s| pair(s + 10, 24, 1.0)).collect();
    let out = train(&pairs[..2], &pairs[2..], &quick_cfg(5, 1), &LossWeights::default(), &small_gen(), &DiscriminatorConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.drck");
    out.best.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = RefocusModel::load(&path).unwrap();
    assert_eq!(loaded.to_checkpoint().to_bytes().unwrap(), bytes);
    assert_eq!(loaded.generator, out.best.generator);
    assert_eq!(loaded.history, out.best.history);
    let img = &pairs[2].input;
    assert_eq!(infer(&loaded.generator, img).unwrap(), infer(&out.best.generator, img).unwrap());
}

#[test]
fn best_state_is_the_validation_argmin() {
    let pairs: Vec<Pair> = (0..4).map(|s| pair(s + 20, 24, 1.5)).collect();
    let cfg = TrainConfig {
        validation_every: 3,
        ..quick_cfg(13, 2)
    };
    let out = train(&pairs[..3], &pairs[3..], &cfg, &LossWeights::without_adversary(), &small_gen(), &DiscriminatorConfig::default()).unwrap();
    let hist = &out.best.history;
    assert_eq!(hist.iter().map(|h| h.0).collect::<Vec<_>>(), vec![3, 6, 9, 12, 13]);
    let min = hist.iter().map(|h| h.1.berhu).fold(f64::INFINITY, f64::min);
    let chosen = hist.iter().find(|h| h.0 == out.best.iteration).unwrap().1.berhu;
    assert_eq!(chosen, min);
    assert!(out.best.iteration <= cfg.max_iterations);
    assert!(chosen <= hist.last().unwrap().1.berhu);
    assert!(out.best.discriminator.is_none());
}

#[test]
fn log_rows_and_header() {
    let pairs: Vec<Pair> = (0..2).map(|s| pair(s + 30, 16, 1.0)).collect();
    let out = train(&pairs[..1], &pairs[1..], &quick_cfg(7, 4), &LossWeights::default(), &small_gen(), &DiscriminatorConfig::default()).unwrap();
    let csv = format_log_csv(&out.log);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], LOG_CSV_HEADER);
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0].split(',').count(), lines[5].split(',').count());
    assert!(out.log.iter().all(|r| r.discriminator_loss.is_some()));
    let w = &out.best.weights;
    for r in &out.log {
        let recomposed = r.terms.adversarial * w.lambda + r.terms.structural * w.nu + r.terms.berhu * w.xi;
        assert!((recomposed - r.generator_loss).abs() < 1e-9);
    }
}

#[test]
fn balancing_equalizes_terms_at_warmup() {
    let pairs: Vec<Pair> = (0..3).map(|s| pair(s + 40, 24, 1.0)).collect();
    let cfg = TrainConfig {
        balance_at: Some(2),
        ..quick_cfg(4, 5)
    };
    let out = train(&pairs[..2], &pairs[2..], &cfg, &LossWeights::default(), &small_gen(), &DiscriminatorConfig::default()).unwrap();
    let w = out.last.weights;
    assert_eq!(w.xi, 1.0);
    assert_ne!(w.nu, 1.0);
    assert_ne!(w.lambda, 1.0);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic_state() {
    let mut bad = pair(50, 16, 1.0);
    bad.target.data_mut()[3] = f64::NAN;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diag.drck");
    let cfg = TrainConfig {
        diagnostic_path: Some(path.clone()),
        ..quick_cfg(3, 0)
    };
    let err = train(&[bad.clone()], &[pair(51, 16, 1.0)], &cfg, &LossWeights::without_adversary(), &small_gen(), &DiscriminatorConfig::default()).unwrap_err();
    assert!(matches!(err, NetError::NonFinite { iteration: 1, .. }), "{err}");
    assert!(RefocusModel::load(&path).is_ok());
}

#[test]
fn decoder_training_leaves_generator_untouched() {
    let pairs: Vec<Pair> = (0..3).map(|s| pair(s + 60, 24, 1.0)).collect();
    let model = train(&pairs[..2], &pairs[2..], &quick_cfg(3, 6), &LossWeights::without_adversary(), &small_gen(), &DiscriminatorConfig::default())
        .unwrap()
        .best;
    let before = model.to_checkpoint().to_bytes().unwrap();
    let samples: Vec<DpmSample> = (0..4)
        .map(|s| DpmSample {
            image: pair(s + 70, 24, 0.5 + s as f64).input,
            dz: s as f64,
        })
        .collect();
    let cfg = DecoderTrainConfig {
        iterations: 10,
        batch_size: 2,
        crop: 16,
        ..Default::default()
    };
    let dec = decoder_train(&model.generator, &samples, &cfg).unwrap();
    assert_eq!(model.to_checkpoint().to_bytes().unwrap(), before);
    assert_eq!(dec.losses.len(), 10);

    let mut frozen = model.generator.params.clone();
    frozen.freeze();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-4), &frozen).unwrap();
    let grads: Vec<Option<&[f64]>> = vec![None; frozen.len()];
    assert!(matches!(adam.update(&mut frozen, &grads), Err(NetError::Frozen(_))));

    let img = &samples[1].image;
    let a = decoder_infer(&model.generator, &dec.decoder, img).unwrap();
    let b = decoder_infer(&model.generator, &dec.decoder, img).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.map.width(), a.map.height()), (24, 24));

    let bytes = dec.to_checkpoint().to_bytes().unwrap();
    let back = DecoderModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
    assert_eq!(decoder_infer(&model.generator, &back.decoder, img).unwrap(), a);
}
