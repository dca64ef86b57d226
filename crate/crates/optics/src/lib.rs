//! Synthetic scenes and a parametric defocus model standing in for microscope
//! acquisitions, including spatially varying blur from a per-pixel defocus map.

pub mod dpm;
pub mod error;
pub mod noise;
pub mod psf;
pub mod scene;
pub mod seed;
pub mod stack;

pub use dpm::{defocus_spatial, dpm_surface, DefocusMap, Surface};
pub use error::{OpticsError, Result};
pub use noise::{add_noise, NoiseModel};
pub use psf::{defocus_uniform, psf_kernel, PsfModel};
pub use scene::{bead_positions, synth_scene, SceneKind, SceneSpec};
pub use stack::{dz_grid, stack_from_scene, synth_stack};
