//! Training pairs, normalization and random crop batches.

use rand::Rng;
use snapfocus_imaging::transform::dihedral;
use snapfocus_imaging::Image;

use crate::error::{NetError, Result};
use crate::tensor::Tensor;

/// A defocused input, its in-focus target and the input's defocus.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub input: Image,
    pub target: Image,
    pub dz: f64,
}

/// How targets are z-scored before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Input and target both use the input's mean and std.
    InputStats,
    /// Each image uses its own statistics.
    Independent,
}

impl NormMode {
    pub fn name(&self) -> &'static str {
        match self {
            NormMode::InputStats => "input",
            NormMode::Independent => "independent",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(NormMode::InputStats),
            "independent" => Ok(NormMode::Independent),
            _ => Err(NetError::Config(format!("unknown normalization {s:?}"))),
        }
    }
}

/// Mean and std used for z-scoring; a flat image keeps unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub fn of(image: &Image) -> Self {
        let std = image.std_dev();
        Self {
            mean: image.mean(),
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, image: &Image) -> Image {
        image.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert(&self, image: &Image) -> Image {
        image.map(|v| v * self.std + self.mean)
    }
}

/// Normalized pair ready for batching.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: Image,
    pub target: Image,
    pub dz: f64,
}

pub fn prepare(pair: &Pair, mode: NormMode) -> Result<Prepared> {
    pair.input.ensure_same_shape(&pair.target)?;
    let s_in = Stats::of(&pair.input);
    let s_tg = match mode {
        NormMode::InputStats => s_in,
        NormMode::Independent => Stats::of(&pair.target),
    };
    Ok(Prepared {
        input: s_in.apply(&pair.input),
        target: s_tg.apply(&pair.target),
        dz: pair.dz,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<Prepared>,
}

impl Dataset {
    pub fn new(pairs: &[Pair], mode: NormMode) -> Result<Self> {
        if pairs.is_empty() {
            return Err(NetError::Config("empty dataset".into()));
        }
        let items = pairs.iter().map(|p| prepare(p, mode)).collect::<Result<_>>()?;
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Prepared] {
        &self.items
    }

    /// Smallest side over all pairs.
    pub fn min_side(&self) -> usize {
        self.items
            .iter()
            .map(|p| p.input.width().min(p.input.height()))
            .min()
            .unwrap_or(0)
    }

    /// `batch` random `crop`×`crop` windows from random pairs, optionally
    /// under one of the eight dihedral transforms. Returns `(x, y, dz)`.
    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize, crop: usize, augment: bool) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let (mut xs, mut ys, mut dz) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..batch {
            let p = &self.items[rng.random_range(0..self.items.len())];
            let (w, h) = (p.input.width(), p.input.height());
            if crop > w || crop > h {
                return Err(NetError::Shape(format!("{crop} crop from {w}x{h} pair")));
            }
            let x0 = rng.random_range(0..=w - crop);
            let y0 = rng.random_range(0..=h - crop);
            let k = if augment { rng.random_range(0..8) } else { 0 };
            let a = dihedral(&p.input.crop(x0, y0, crop, crop)?, k)?;
            let b = dihedral(&p.target.crop(x0, y0, crop, crop)?, k)?;
            xs.push(a);
            ys.push(b);
            dz.push(p.dz);
        }
        let xr: Vec<&Image> = xs.iter().collect();
        let yr: Vec<&Image> = ys.iter().collect();
        Ok((Tensor::from_images(&xr)?, Tensor::from_images(&yr)?, dz))
    }
}
