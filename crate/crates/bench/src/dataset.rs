//! Per-FOV dataset construction and the on-disk split layout.
//!
//! ```text
//! out/
//!   config.toml
//!   train.tsv  validation.tsv  test.tsv     fov_id, scene seed, ground-truth index, depths
//!   fov_000/pairs.tsv                       input, target, dz (relative to ground truth)
//!   fov_000/target_00.rf32
//!   fov_000/input_00_000.rf32 ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snapfocus_imaging::io::{load_rf32, save_rf32};
use snapfocus_imaging::register::{align_to, register_translation};
use snapfocus_imaging::transform::crop_tiles;
use snapfocus_imaging::{Image, ZStack};
use snapfocus_net::data::Pair;
use snapfocus_optics::seed::derive_seed;
use snapfocus_optics::synth_stack;

use crate::config::PipelineConfig;
use crate::edof::{edof_fuse, gt_select};
use crate::error::{BenchError, Result};

pub const SPLIT_HEADER: &str = "# fov\tseed\tgt_index\tdz_values";
pub const PAIRS_HEADER: &str = "# input\ttarget\tdz";

/// Salt separating test scene seeds from training and validation seeds.
const TEST_SALT: u64 = 0x7E57_5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn file_name(self) -> &'static str {
        match self {
            SplitKind::Train => "train.tsv",
            SplitKind::Validation => "validation.tsv",
            SplitKind::Test => "test.tsv",
        }
    }
}

/// Provenance of one field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct FovRecord {
    pub id: usize,
    pub seed: u64,
    /// Plane chosen as in-focus truth.
    pub gt_index: usize,
    /// Defocus of every plane relative to the chosen truth plane.
    pub dz_values: Vec<f64>,
}

impl FovRecord {
    pub fn dir_name(&self) -> String {
        format!("fov_{:03}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<FovRecord>,
    pub validation: Vec<FovRecord>,
    pub test: Vec<FovRecord>,
}

impl DatasetSplit {
    pub fn get(&self, kind: SplitKind) -> &[FovRecord] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    /// Errors when an FOV id or scene seed appears in more than one split.
    pub fn audit(&self) -> Result<()> {
        let all: Vec<&FovRecord> = self.train.iter().chain(&self.validation).chain(&self.test).collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.id == b.id || a.seed == b.seed {
                    return Err(BenchError::Data(format!("FOV {} and {} overlap", a.id, b.id)));
                }
            }
        }
        Ok(())
    }
}

/// One processed FOV: truth tiles and every (defocused tile, truth tile) pair.
#[derive(Debug, Clone)]
pub struct FovData {
    pub record: FovRecord,
    pub targets: Vec<Image>,
    /// `(plane index, tile index, input tile)`.
    pub inputs: Vec<(usize, usize, Image)>,
}

impl FovData {
    pub fn pairs(&self) -> Vec<Pair> {
        self.inputs
            .iter()
            .map(|(p, t, img)| Pair {
                input: img.clone(),
                target: self.targets[*t].clone(),
                dz: self.record.dz_values[*p],
            })
            .collect()
    }
}

/// Scene seed of training/validation FOV `id`.
pub fn fov_seed(cfg: &PipelineConfig, id: usize) -> u64 {
    derive_seed(cfg.dataset.seed, id as u64)
}

/// Scene seed of the `k`-th test FOV; drawn from a disjoint seed stream.
pub fn test_fov_seed(cfg: &PipelineConfig, k: usize) -> u64 {
    derive_seed(cfg.dataset.seed ^ TEST_SALT, k as u64)
}

/// Align every plane to the central plane by integer translation.
pub fn register_stack(stack: &ZStack, max_shift: usize) -> Result<ZStack> {
    let fixed = stack.plane(stack.len() / 2).clone();
    let mut planes = Vec::with_capacity(stack.len());
    for p in stack.planes() {
        let shift = register_translation(p, &fixed, max_shift)?;
        planes.push(align_to(p, shift));
    }
    Ok(ZStack::new(planes, stack.dz_values().to_vec())?)
}

/// Synthesize, register, fuse, select the truth plane and tile one FOV.
pub fn build_fov(cfg: &PipelineConfig, id: usize, seed: u64) -> Result<FovData> {
    let d = &cfg.dataset;
    let spec = cfg.scene.spec(seed)?;
    let stack = synth_stack(&spec, &cfg.psf.model()?, -d.range, d.range, d.z_step, &cfg.noise.model())?;
    let stack = register_stack(&stack, d.register_max_shift)?;
    let edof = edof_fuse(&stack, d.edof_window)?;
    let gt = gt_select(&stack, &edof)?;
    let z_gt = stack.dz_values()[gt];
    let dz_values = stack.dz_values().iter().map(|&z| z - z_gt).collect();
    let targets = crop_tiles(stack.plane(gt), d.tile, d.tile)?;
    let mut inputs = Vec::new();
    for (p, plane) in stack.planes().iter().enumerate() {
        for (t, tile) in crop_tiles(plane, d.tile, d.tile)?.into_iter().enumerate() {
            inputs.push((p, t, tile));
        }
    }
    Ok(FovData {
        record: FovRecord {
            id,
            seed,
            gt_index: gt,
            dz_values,
        },
        targets,
        inputs,
    })
}

/// Random FOV assignment: `round(split * fovs)` to training, at least one to each side.
pub fn split_ids(fovs: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..fovs).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((split * fovs as f64).round() as usize).clamp(1, fovs.saturating_sub(1));
    let mut train = ids[..n_train].to_vec();
    let mut val = ids[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// All FOVs of a configuration, in memory.
pub struct BuiltDataset {
    pub split: DatasetSplit,
    pub train: Vec<FovData>,
    pub validation: Vec<FovData>,
    pub test: Vec<FovData>,
}

impl BuiltDataset {
    pub fn pairs(&self, kind: SplitKind) -> Vec<Pair> {
        let fovs = match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        };
        fovs.iter().flat_map(FovData::pairs).collect()
    }
}

pub fn build_in_memory(cfg: &PipelineConfig) -> Result<BuiltDataset> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let (train_ids, val_ids) = split_ids(d.fovs, d.split, derive_seed(d.seed, 0x5711));
    let build = |ids: &[usize]| -> Result<Vec<FovData>> {
        ids.iter().map(|&id| build_fov(cfg, id, fov_seed(cfg, id))).collect()
    };
    let train = build(&train_ids)?;
    let validation = build(&val_ids)?;
    let test = (0..d.test_fovs)
        .map(|k| build_fov(cfg, d.fovs + k, test_fov_seed(cfg, k)))
        .collect::<Result<Vec<_>>>()?;
    let records = |v: &[FovData]| v.iter().map(|f| f.record.clone()).collect();
    let split = DatasetSplit {
        train: records(&train),
        validation: records(&validation),
        test: records(&test),
    };
    split.audit()?;
    Ok(BuiltDataset {
        split,
        train,
        validation,
        test,
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Data(format!("{}: {e}", path.display()))
}

fn write_fov(dir: &Path, fov: &FovData) -> Result<()> {
    let fov_dir = dir.join(fov.record.dir_name());
    fs::create_dir_all(&fov_dir).map_err(|e| io_err(&fov_dir, e))?;
    for (t, target) in fov.targets.iter().enumerate() {
        save_rf32(target, fov_dir.join(format!("target_{t:02}.rf32")))?;
    }
    let mut tsv = format!("{PAIRS_HEADER}\n");
    for (p, t, tile) in &fov.inputs {
        let name = format!("input_{t:02}_{p:03}.rf32");
        save_rf32(tile, fov_dir.join(&name))?;
        tsv.push_str(&format!("{name}\ttarget_{t:02}.rf32\t{}\n", fov.record.dz_values[*p]));
    }
    let path = fov_dir.join("pairs.tsv");
    fs::write(&path, tsv).map_err(|e| io_err(&path, e))
}

pub fn format_split(records: &[FovRecord]) -> String {
    let mut out = format!("{SPLIT_HEADER}\n");
    for r in records {
        let dz: Vec<String> = r.dz_values.iter().map(|z| z.to_string()).collect();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, r.seed, r.gt_index, dz.join(",")));
    }
    out
}

pub fn parse_split(text: &str) -> Result<Vec<FovRecord>> {
    let bad = |n: usize, what: &str| BenchError::Data(format!("split line {n}: {what}"));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad(n, "expected 4 columns"));
        }
        let dz_values = cols[3]
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| bad(n, "bad dz")))
            .collect::<Result<Vec<_>>>()?;
        out.push(FovRecord {
            id: cols[0].parse().map_err(|_| bad(n, "bad id"))?,
            seed: cols[1].parse().map_err(|_| bad(n, "bad seed"))?,
            gt_index: cols[2].parse().map_err(|_| bad(n, "bad gt index"))?,
            dz_values,
        });
    }
    Ok(out)
}

/// Build every FOV and write the split layout to `dir`.
pub fn dataset_build(cfg: &PipelineConfig, dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let built = build_in_memory(cfg)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for fov in built.train.iter().chain(&built.validation).chain(&built.test) {
        write_fov(dir, fov)?;
    }
    for kind in [SplitKind::Train, SplitKind::Validation, SplitKind::Test] {
        let path = dir.join(kind.file_name());
        fs::write(&path, format_split(built.split.get(kind))).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| io_err(&path, e))?;
    Ok(built.split)
}

pub fn load_split(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let read = |kind: SplitKind| -> Result<Vec<FovRecord>> {
        let path = dir.join(kind.file_name());
        parse_split(&fs::read_to_string(&path).map_err(|e| io_err(&path, e))?)
    };
    let split = DatasetSplit {
        train: read(SplitKind::Train)?,
        validation: read(SplitKind::Validation)?,
        test: read(SplitKind::Test)?,
    };
    split.audit()?;
    Ok(split)
}

/// Read the pairs of the given FOVs back from disk.
pub fn load_pairs(dir: impl AsRef<Path>, records: &[FovRecord]) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for r in records {
        let fov_dir: PathBuf = dir.as_ref().join(r.dir_name());
        let path = fov_dir.join("pairs.tsv");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let dz = match cols.as_slice() {
                [_, _, dz] => dz.parse::<f64>().ok(),
                _ => None,
            }
            .ok_or_else(|| BenchError::Data(format!("{}: line {}", path.display(), n + 1)))?;
            pairs.push(Pair {
                input: load_rf32(fov_dir.join(cols[0]))?,
                target: load_rf32(fov_dir.join(cols[1]))?,
                dz,
            });
        }
    }
    Ok(pairs)
}
