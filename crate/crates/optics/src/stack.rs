use snapfocus_imaging::{Image, ZStack};

use crate::error::{OpticsError, Result};
use crate::noise::{add_noise, NoiseModel};
use crate::psf::{defocus_uniform, PsfModel};
use crate::scene::{synth_scene, SceneSpec};
use crate::seed::derive_seed;

/// Axial sampling `dz_min..=dz_max` at `step`; every value is an integer
/// multiple of `step`, so the grid always contains an exact zero.
pub fn dz_grid(dz_min: f64, dz_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && dz_min < 0.0 && 0.0 < dz_max) {
        return Err(OpticsError::InvalidParameter(format!(
            "range {dz_min}..{dz_max} step {step} must straddle zero with a positive step"
        )));
    }
    let k_min = (dz_min / step).round() as i64;
    let k_max = (dz_max / step).round() as i64;
    Ok((k_min..=k_max).map(|k| k as f64 * step).collect())
}

/// Blur `scene` at every dz of the grid, then add per-plane noise seeded from
/// `(noise_seed, plane index)`.
pub fn stack_from_scene(
    scene: &Image,
    model: &PsfModel,
    dz_values: &[f64],
    noise: &NoiseModel,
    noise_seed: u64,
) -> Result<ZStack> {
    let planes = dz_values
        .iter()
        .enumerate()
        .map(|(i, &dz)| {
            let blurred = defocus_uniform(scene, model, dz)?;
            add_noise(&blurred, noise, derive_seed(noise_seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let stack = ZStack::new(planes, dz_values.to_vec())?;
    match dz_values.iter().position(|&z| z == 0.0) {
        Some(i) => Ok(stack.with_reference(i)?),
        None => Ok(stack),
    }
}

pub fn synth_stack(
    spec: &SceneSpec,
    model: &PsfModel,
    dz_min: f64,
    dz_max: f64,
    step: f64,
    noise: &NoiseModel,
) -> Result<ZStack> {
    let scene = synth_scene(spec)?;
    let grid = dz_grid(dz_min, dz_max, step)?;
    stack_from_scene(&scene, model, &grid, noise, derive_seed(spec.seed, 0x5EED))
}
