//! Parameter storage plus the generator U-Net, the discriminator and the
//! defocus-map decoder head.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NetError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Rounds to the nearest `f32` so that stored parameters survive the
/// checkpoint format unchanged.
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
    frozen: bool,
}

/// Graph handles for one [`Params`] set.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| NetError::Config(format!("no parameter named {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Params {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            frozen: false,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(NetError::Config(format!("duplicate parameter {name}")));
        }
        self.entries.push((name, tensor.map(round_f32)));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Adds every tensor to `g`: as trainable leaves, or as constants when
    /// `trainable` is false or the set is frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                if trainable && !self.frozen {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let index = self.entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Bound { vars, index }
    }

    /// Handles for vars already added to a graph, one per tensor in order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.entries.len() {
            return Err(NetError::Config(format!("{} vars for {} parameters", vars.len(), self.entries.len())));
        }
        let index = self.entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Ok(Bound {
            vars: vars.to_vec(),
            index,
        })
    }

    /// Mutable access for optimizers. Fails on a frozen set.
    pub fn tensors_mut(&mut self) -> Result<impl Iterator<Item = &mut Tensor>> {
        if self.frozen {
            return Err(NetError::Frozen(format!("{} tensors", self.entries.len())));
        }
        Ok(self.entries.iter_mut().map(|(_, t)| t))
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &Params) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape())
    }

    /// Replaces every tensor with the same-named one from `other`.
    pub fn load_from(&mut self, other: &Params) -> Result<()> {
        if !self.same_layout(other) {
            return Err(NetError::Config("parameter layout mismatch".into()));
        }
        for ((_, t), (_, s)) in self.entries.iter_mut().zip(&other.entries) {
            *t = s.map(round_f32);
        }
        Ok(())
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

/// Glorot-scaled normal truncated at two standard deviations.
fn truncated_normal(shape: [usize; 4], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn add_conv(p: &mut Params, name: &str, ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    p.insert(format!("{name}.w"), truncated_normal([co, ci, 3, 3], ci * 9, co * 9, rng))?;
    p.insert(format!("{name}.b"), Tensor::zeros([1, co, 1, 1]))
}

fn conv(g: &mut Graph, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = b.get(&format!("{name}.w"))?;
    let bias = b.get(&format!("{name}.b"))?;
    g.conv2d(x, w, bias)
}

fn conv_act(g: &mut Graph, b: &Bound, name: &str, x: Var, slope: f64) -> Result<Var> {
    let c = conv(g, b, name, x)?;
    g.leaky_relu(c, slope)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Number of pooling levels.
    pub depth: usize,
    pub base_channels: usize,
    /// Negative-side slope of the leaky ReLU.
    pub slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            slope: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(NetError::Config("depth and base_channels must be at least 1".into()));
        }
        if !(self.slope >= 0.0 && self.slope < 1.0) {
            return Err(NetError::Config(format!("leaky slope {} outside [0, 1)", self.slope)));
        }
        Ok(())
    }

    /// Channels at encoder level `i`; `i == depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial sides must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let m = self.multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(NetError::Shape(format!(
                "{height}x{width} input is not divisible by {m} (depth {})",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Encoder activations consumed by an up-sampling path.
#[derive(Debug, Clone)]
pub struct Features {
    pub bottleneck: Var,
    /// Skip tensors, finest level first.
    pub skips: Vec<Var>,
}

/// Residual U-Net: per level conv→leaky plus a residual conv→leaky, then
/// 2×2 average pooling; the decoder upsamples, convolves, concatenates the
/// skip and merges. The final 3×3 conv emits one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: Params,
}

fn add_up_path(p: &mut Params, cfg: &GeneratorConfig, out_channels: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    for i in (0..cfg.depth).rev() {
        add_conv(p, &format!("dec{i}.up"), cfg.channels(i + 1), cfg.channels(i), rng)?;
        add_conv(p, &format!("dec{i}.merge"), 2 * cfg.channels(i), cfg.channels(i), rng)?;
    }
    add_conv(p, "out", cfg.channels(0), out_channels, rng)
}

fn up_path(g: &mut Graph, b: &Bound, cfg: &GeneratorConfig, f: &Features) -> Result<Var> {
    let mut h = f.bottleneck;
    for i in (0..cfg.depth).rev() {
        let u = g.upsample2(h)?;
        let u = conv_act(g, b, &format!("dec{i}.up"), u, cfg.slope)?;
        let cat = g.concat_channels(u, f.skips[i])?;
        h = conv_act(g, b, &format!("dec{i}.merge"), cat, cfg.slope)?;
    }
    conv(g, b, "out", h)
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let mut ci = 1;
        for i in 0..config.depth {
            let co = config.channels(i);
            add_conv(&mut p, &format!("enc{i}.conv"), ci, co, &mut rng)?;
            add_conv(&mut p, &format!("enc{i}.res"), co, co, &mut rng)?;
            ci = co;
        }
        let cm = config.channels(config.depth);
        add_conv(&mut p, "mid.conv", ci, cm, &mut rng)?;
        add_conv(&mut p, "mid.res", cm, cm, &mut rng)?;
        add_up_path(&mut p, &config, 1, &mut rng)?;
        Ok(Self { config, params: p })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    fn block(&self, g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let s = self.config.slope;
        let a = conv_act(g, b, &format!("{prefix}.conv"), x, s)?;
        let r = conv_act(g, b, &format!("{prefix}.res"), a, s)?;
        g.add(a, r)
    }

    pub fn encode(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Features> {
        let [_, c, h, w] = g.value(x).shape();
        if c != 1 {
            return Err(NetError::Shape(format!("generator expects 1 channel, got {c}")));
        }
        self.config.check_size(h, w)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut cur = x;
        for i in 0..self.config.depth {
            let s = self.block(g, b, &format!("enc{i}"), cur)?;
            skips.push(s);
            cur = g.avgpool2(s)?;
        }
        let bottleneck = self.block(g, b, "mid", cur)?;
        Ok(Features { bottleneck, skips })
    }

    pub fn decode(&self, g: &mut Graph, b: &Bound, f: &Features) -> Result<Var> {
        up_path(g, b, &self.config, f)
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let f = self.encode(g, b, x)?;
        self.decode(g, b, &f)
    }

    /// Sets the output convolution to zero.
    pub fn zero_output_layer(&mut self) -> Result<()> {
        for (name, t) in self.params.entries.iter_mut() {
            if name.starts_with("out.") {
                t.data_mut().fill(0.0);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub blocks: usize,
    pub base_channels: usize,
    pub slope: f64,
    /// Initial value of every fully connected weight.
    pub fc_init: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            base_channels: 8,
            slope: 0.1,
            fc_init: 0.1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.base_channels == 0 {
            return Err(NetError::Config("blocks and base_channels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Conv→leaky→pool blocks, global average pooling and one affine map to a
/// scalar score per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: Params,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let mut ci = 1;
        for i in 0..config.blocks {
            let co = config.base_channels << i;
            add_conv(&mut p, &format!("block{i}"), ci, co, &mut rng)?;
            ci = co;
        }
        p.insert("fc.w", Tensor::filled([1, ci, 1, 1], config.fc_init))?;
        p.insert("fc.b", Tensor::zeros([1, 1, 1, 1]))?;
        Ok(Self { config, params: p })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Scores of shape `(n, 1, 1, 1)`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.config.blocks {
            h = conv_act(g, b, &format!("block{i}"), h, self.config.slope)?;
            let [_, _, hh, ww] = g.value(h).shape();
            if hh >= 2 && ww >= 2 {
                h = g.avgpool2(h)?;
            }
        }
        let pooled = g.spatial_mean(h)?;
        g.linear(pooled, b.get("fc.w")?, b.get("fc.b")?)
    }
}

/// Defocus-map head: a copy of the generator's up-sampling path fed with the
/// encoder features of a frozen generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub config: GeneratorConfig,
    pub params: Params,
}

impl Decoder {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        add_up_path(&mut p, &config, 1, &mut rng)?;
        Ok(Self { config, params: p })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, f: &Features) -> Result<Var> {
        up_path(g, b, &self.config, f)
    }
}
