//! `key = value` configuration with bracketed sections (TOML). Every field
//! has a default, so a partial file only overrides what it names.

use std::path::Path;

use serde::{Deserialize, Serialize};
use snapfocus_net::data::NormMode;
use snapfocus_net::loss::{BerhuC, LossWeights, Reduction};
use snapfocus_net::model::{DiscriminatorConfig, GeneratorConfig};
use snapfocus_net::train::TrainConfig;
use snapfocus_optics::psf::DEFAULT_DOF;
use snapfocus_optics::{NoiseModel, PsfModel, SceneSpec};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// `texture` or `beads`.
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub correlation_length: f64,
    pub bead_count: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            kind: "texture".into(),
            width: 64,
            height: 64,
            pixel_pitch: 0.325,
            correlation_length: 1.5,
            bead_count: 5,
        }
    }
}

impl SceneConfig {
    pub fn spec(&self, seed: u64) -> Result<SceneSpec> {
        let mut spec = match self.kind.as_str() {
            "texture" => SceneSpec::texture(self.correlation_length, self.width, self.height, seed),
            "beads" => SceneSpec::beads(self.bead_count, self.width, self.height, seed),
            other => return Err(BenchError::Config(format!("unknown scene kind {other:?}"))),
        };
        spec.pixel_pitch = self.pixel_pitch;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfConfig {
    /// In-focus blur sigma, pixels.
    pub sigma0: f64,
    /// Depth of field in z-units; the Rayleigh-like range is `dof / sqrt(3)`.
    pub dof: f64,
    pub asymmetry: f64,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            sigma0: 0.25,
            dof: DEFAULT_DOF,
            asymmetry: 1.0,
        }
    }
}

impl PsfConfig {
    pub fn model(&self) -> Result<PsfModel> {
        Ok(PsfModel::new(self.sigma0, self.dof / 3f64.sqrt())?.with_asymmetry(self.asymmetry)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub gaussian_sigma: f64,
    pub poisson_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.005,
            poisson_scale: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn model(&self) -> NoiseModel {
        NoiseModel {
            gaussian_sigma: self.gaussian_sigma,
            poisson_scale: self.poisson_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Half-width of the defocus range in z-units (presets 2, 5, 10).
    pub range: f64,
    pub z_step: f64,
    /// FOVs shared by the training and validation splits.
    pub fovs: usize,
    /// FOVs with separate scene seeds, used only for testing.
    pub test_fovs: usize,
    pub tile: usize,
    /// Fraction of FOVs assigned to training.
    pub split: f64,
    pub edof_window: usize,
    /// Largest translation searched when registering planes.
    pub register_max_shift: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            range: 4.0,
            z_step: 0.5,
            fovs: 20,
            test_fovs: 6,
            tile: 64,
            split: 0.85,
            edof_window: 9,
            register_max_shift: 2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub generator_updates: usize,
    pub discriminator_updates: usize,
    pub validation_every: usize,
    pub crop: usize,
    pub augment: bool,
    /// `input` (z-score both images with the input's statistics) or `independent`.
    pub normalization: String,
    pub lambda: f64,
    pub nu: f64,
    pub xi: f64,
    /// Fixed BerHu threshold; 0 selects 10% of the normalized target std.
    pub berhu_c: f64,
    /// Iteration at which the weights are balanced; 0 disables balancing.
    pub balance_at: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub slope: f64,
    pub discriminator_blocks: usize,
    pub discriminator_channels: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let g = GeneratorConfig::default();
        let d = DiscriminatorConfig::default();
        Self {
            iterations: 500,
            batch_size: t.batch_size,
            lr_generator: t.lr_generator,
            lr_discriminator: t.lr_discriminator,
            generator_updates: t.generator_updates,
            discriminator_updates: t.discriminator_updates,
            validation_every: t.validation_every,
            crop: t.crop,
            augment: t.augment,
            normalization: "input".into(),
            lambda: 0.0,
            nu: 1.0,
            xi: 1.0,
            berhu_c: 0.0,
            balance_at: 0,
            depth: g.depth,
            base_channels: g.base_channels,
            slope: g.slope,
            discriminator_blocks: d.blocks,
            discriminator_channels: d.base_channels,
            seed: 7,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.batch_size,
            lr_generator: self.lr_generator,
            lr_discriminator: self.lr_discriminator,
            generator_updates: self.generator_updates,
            discriminator_updates: self.discriminator_updates,
            validation_every: self.validation_every,
            max_iterations: self.iterations,
            crop: self.crop,
            augment: self.augment,
            norm: NormMode::from_name(&self.normalization)?,
            balance_at: (self.balance_at > 0).then_some(self.balance_at),
            seed: self.seed,
            diagnostic_path: None,
        })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            nu: self.nu,
            xi: self.xi,
            berhu_c: if self.berhu_c > 0.0 { BerhuC::Fixed(self.berhu_c) } else { BerhuC::Auto },
            berhu_reduction: Reduction::Mean,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            slope: self.slope,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            blocks: self.discriminator_blocks,
            base_channels: self.discriminator_channels,
            slope: self.slope,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub iterations: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub crop: usize,
    /// Defocus values of the uniform training inputs span `[0, range]`.
    pub range: f64,
    pub z_step: f64,
    pub fovs: usize,
    pub seed: u64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr: 1e-4,
            batch_size: 5,
            crop: 32,
            range: 4.0,
            z_step: 0.5,
            fovs: 12,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub fovs: usize,
    pub repeats: usize,
    /// Simulated stage move plus exposure time per acquisition, seconds.
    pub latency_s: f64,
    pub fov_size: usize,
    pub search_range: f64,
    pub tolerance: f64,
    pub start_spread: f64,
    /// Threads for the parallel single-shot row; 0 uses all cores.
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            fovs: 4,
            repeats: 4,
            latency_s: 0.1,
            fov_size: 96,
            search_range: 10.0,
            tolerance: 0.1,
            start_spread: 4.0,
            threads: 0,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub psf: PsfConfig,
    pub noise: NoiseConfig,
    pub dataset: DatasetConfig,
    pub train: TrainSection,
    pub decoder: DecoderSection,
    pub bench: BenchSection,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Full configuration including defaults.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if !(d.range > 0.0 && d.z_step > 0.0) {
            return Err(BenchError::Config("dataset range and z_step must be positive".into()));
        }
        if !(d.split > 0.0 && d.split < 1.0) {
            return Err(BenchError::Config(format!("split {} must lie in (0, 1)", d.split)));
        }
        if d.fovs < 2 {
            return Err(BenchError::Config("need at least two FOVs to split".into()));
        }
        if d.tile == 0 || d.tile > self.scene.width || d.tile > self.scene.height {
            return Err(BenchError::Config(format!(
                "tile {} does not fit a {}x{} scene",
                d.tile, self.scene.width, self.scene.height
            )));
        }
        if d.edof_window == 0 || d.edof_window % 2 == 0 {
            return Err(BenchError::Config("edof_window must be odd".into()));
        }
        self.scene.spec(0)?;
        self.psf.model()?;
        self.train.train_config()?.validate()?;
        self.train.weights().validate()?;
        self.train.generator().validate()?;
        Ok(())
    }
}
