use snapfocus_imaging::{Image, ZStack};
use snapfocus_optics::{add_noise, defocus_uniform, seed::derive_seed, NoiseModel, PsfModel};

use crate::criteria::{focus_metric, FocusCriterion};
use crate::error::{AutofocusError, Result};

pub const DEFAULT_LATENCY_S: f64 = 0.1;

/// What the simulated camera sees.
#[derive(Debug, Clone)]
pub enum StageSource {
    /// An in-focus scene blurred on demand with the parametric model.
    Scene {
        scene: Image,
        model: PsfModel,
        noise: NoiseModel,
        noise_seed: u64,
    },
    /// A pre-rendered stack, linearly interpolated between planes.
    Stack(ZStack),
}

/// A motorized stage over one FOV. Stage coordinate `z` maps to defocus
/// `z - focus_z`. Time is simulated: each acquisition advances the clock by
/// `latency` seconds without sleeping.
#[derive(Debug, Clone)]
pub struct VirtualStage {
    source: StageSource,
    focus_z: f64,
    z_min: f64,
    z_max: f64,
    z_position: f64,
    latency: f64,
    acquisition_count: usize,
    simulated_time: f64,
}

impl VirtualStage {
    pub fn from_scene(scene: Image, model: PsfModel, focus_z: f64, half_travel: f64) -> Result<Self> {
        if !(half_travel > 0.0) {
            return Err(AutofocusError::InvalidConfig(format!("half travel {half_travel} must be > 0")));
        }
        model.validate()?;
        Ok(Self::build(
            StageSource::Scene {
                scene,
                model,
                noise: NoiseModel::none(),
                noise_seed: 0,
            },
            focus_z,
            focus_z - half_travel,
            focus_z + half_travel,
        ))
    }

    /// Stage travel covers exactly the stack's dz span.
    pub fn from_stack(stack: ZStack, focus_z: f64) -> Self {
        let (lo, hi) = (stack.dz_values()[0], *stack.dz_values().last().unwrap());
        Self::build(StageSource::Stack(stack), focus_z, focus_z + lo, focus_z + hi)
    }

    fn build(source: StageSource, focus_z: f64, z_min: f64, z_max: f64) -> Self {
        Self {
            source,
            focus_z,
            z_min,
            z_max,
            z_position: focus_z.clamp(z_min, z_max),
            latency: DEFAULT_LATENCY_S,
            acquisition_count: 0,
            simulated_time: 0.0,
        }
    }

    /// Per-acquisition noise, seeded by `(seed, acquisition index)`.
    pub fn with_noise(mut self, noise: NoiseModel, seed: u64) -> Self {
        if let StageSource::Scene { noise: n, noise_seed, .. } = &mut self.source {
            *n = noise;
            *noise_seed = seed;
        }
        self
    }

    pub fn with_latency(mut self, seconds: f64) -> Result<Self> {
        if !(seconds >= 0.0) {
            return Err(AutofocusError::InvalidConfig(format!("latency {seconds} must be >= 0")));
        }
        self.latency = seconds;
        Ok(self)
    }

    pub fn source(&self) -> &StageSource {
        &self.source
    }

    pub fn focus_z(&self) -> f64 {
        self.focus_z
    }

    pub fn range(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }

    pub fn z_position(&self) -> f64 {
        self.z_position
    }

    pub fn latency(&self) -> f64 {
        self.latency
    }

    pub fn acquisition_count(&self) -> usize {
        self.acquisition_count
    }

    /// Simulated seconds spent acquiring so far.
    pub fn simulated_time(&self) -> f64 {
        self.simulated_time
    }

    pub fn check_range(&self, z: f64) -> Result<()> {
        if z.is_finite() && z >= self.z_min && z <= self.z_max {
            Ok(())
        } else {
            Err(AutofocusError::OutOfRange {
                z,
                min: self.z_min,
                max: self.z_max,
            })
        }
    }

    pub fn move_to(&mut self, z: f64) -> Result<()> {
        self.check_range(z)?;
        self.z_position = z;
        Ok(())
    }

    /// Capture one frame at the current position.
    pub fn acquire(&mut self) -> Result<Image> {
        let dz = self.z_position - self.focus_z;
        let index = self.acquisition_count as u64;
        let frame = match &self.source {
            StageSource::Scene {
                scene,
                model,
                noise,
                noise_seed,
            } => {
                let blurred = defocus_uniform(scene, model, dz)?;
                add_noise(&blurred, noise, derive_seed(*noise_seed, index))?
            }
            StageSource::Stack(stack) => interpolate_plane(stack, dz)?,
        };
        self.acquisition_count += 1;
        self.simulated_time += self.latency;
        Ok(frame)
    }

    pub fn acquire_at(&mut self, z: f64) -> Result<Image> {
        self.move_to(z)?;
        self.acquire()
    }
}

fn interpolate_plane(stack: &ZStack, dz: f64) -> Result<Image> {
    let zs = stack.dz_values();
    let hi = zs.partition_point(|&z| z < dz).min(zs.len() - 1);
    if zs[hi] == dz || hi == 0 {
        return Ok(stack.plane(hi).clone());
    }
    let lo = hi - 1;
    let t = (dz - zs[lo]) / (zs[hi] - zs[lo]);
    Ok(stack.plane(lo).zip_map(stack.plane(hi), |a, b| a + t * (b - a))?)
}

/// One acquisition per z, in order. An out-of-range z fails before any
/// capture happens.
pub fn focus_curve(stage: &mut VirtualStage, criterion: FocusCriterion, z_list: &[f64]) -> Result<Vec<(f64, f64)>> {
    for &z in z_list {
        stage.check_range(z)?;
    }
    z_list
        .iter()
        .map(|&z| {
            let frame = stage.acquire_at(z)?;
            Ok((z, focus_metric(&frame, criterion)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use snapfocus_optics::{synth_scene, synth_stack, SceneSpec};

    fn stage() -> VirtualStage {
        let scene = synth_scene(&SceneSpec::beads(3, 32, 32, 1)).unwrap();
        VirtualStage::from_scene(scene, PsfModel::new(0.5, 1.0).unwrap(), 0.0, 4.0).unwrap()
    }

    #[test]
    fn counter_and_clock() {
        let mut s = stage();
        let z: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
        let before = s.acquisition_count();
        let curve = focus_curve(&mut s, FocusCriterion::Std, &z).unwrap();
        assert_eq!(curve.len(), 21);
        assert_eq!(s.acquisition_count(), before + 21);
        assert!((s.simulated_time() - 2.1).abs() < 1e-12);
        assert!(focus_curve(&mut s, FocusCriterion::Std, &[]).unwrap().is_empty());
        assert_eq!(s.acquisition_count(), 21);
    }

    #[test]
    fn moves_are_explicit_and_checked() {
        let mut s = stage();
        s.move_to(1.5).unwrap();
        s.acquire().unwrap();
        assert_eq!(s.z_position(), 1.5);
        assert!(matches!(s.move_to(4.5), Err(AutofocusError::OutOfRange { .. })));
        assert_eq!(s.z_position(), 1.5);
        assert!(focus_curve(&mut s, FocusCriterion::Vol5, &[0.0, 9.0]).is_err());
        assert_eq!(s.acquisition_count(), 1);
    }

    #[test]
    fn stack_source_hits_planes_and_interpolates() {
        let spec = SceneSpec::texture(2.0, 16, 16, 3);
        let stack = synth_stack(&spec, &PsfModel::default(), -1.0, 1.0, 0.5, &NoiseModel::none()).unwrap();
        let mut s = VirtualStage::from_stack(stack.clone(), 10.0);
        assert_eq!(s.range(), (9.0, 11.0));
        assert_eq!(&s.acquire_at(10.5).unwrap(), stack.plane(3));
        let mid = s.acquire_at(10.25).unwrap();
        let want = stack.plane(2).zip_map(stack.plane(3), |a, b| 0.5 * (a + b)).unwrap();
        for (a, b) in mid.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
