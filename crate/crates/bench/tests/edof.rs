use snapfocus_bench::edof::{edof_fuse, edof_selection, gt_select};
use snapfocus_imaging::{rmse, Image, ZStack};
use snapfocus_optics::psf::DEFAULT_DOF;
use snapfocus_optics::{defocus_uniform, synth_scene, synth_stack, NoiseModel, PsfModel, SceneSpec};

fn psf() -> PsfModel {
    PsfModel::new(0.25, DEFAULT_DOF / 3f64.sqrt()).unwrap()
}

fn texture(seed: u64, w: usize, h: usize) -> Image {
    synth_scene(&SceneSpec::texture(1.5, w, h, seed)).unwrap()
}

/// Take `a` where the mask is true, `b` elsewhere.
fn masked(a: &Image, b: &Image, mask: impl Fn(usize) -> bool) -> Image {
    let w = a.width();
    a.with_data(
        a.data()
            .iter()
            .zip(b.data())
            .enumerate()
            .map(|(i, (&x, &y))| if mask(i % w) { x } else { y })
            .collect(),
    )
    .unwrap()
}

#[test]
fn half_sharp_planes_fuse_by_region() {
    for seed in 0..5 {
        let (w, h) = (96, 64);
        let sharp = texture(seed, w, h);
        let blurred = defocus_uniform(&sharp, &psf(), 3.0).unwrap();
        let left = |x: usize| x < w / 2;
        let a = masked(&sharp, &blurred, left);
        let b = masked(&blurred, &sharp, left);
        let stack = ZStack::new(vec![a, b], vec![-1.0, 1.0]).unwrap();
        let sel = edof_selection(&stack, 9).unwrap();
        let correct = sel
            .iter()
            .enumerate()
            .filter(|&(i, &p)| p == if left(i % w) { 0 } else { 1 })
            .count();
        let acc = correct as f64 / sel.len() as f64;
        assert!(acc >= 0.95, "seed {seed}: region accuracy {acc}");
        let fused = edof_fuse(&stack, 9).unwrap();
        assert!(rmse(&fused, &sharp).unwrap() < 0.5 * rmse(&blurred, &sharp).unwrap());
    }
}

#[test]
fn uniform_focus_fuses_to_sharpest_plane() {
    let sigma = 0.005;
    let noise = NoiseModel { gaussian_sigma: sigma, poisson_scale: 0.0 };
    for seed in 0..5 {
        let stack = synth_stack(&SceneSpec::texture(1.5, 64, 64, seed), &psf(), -3.0, 3.0, 1.0, &noise).unwrap();
        let fused = edof_fuse(&stack, 9).unwrap();
        let focus = stack.reference_index().unwrap();
        let err = rmse(&fused, stack.plane(focus)).unwrap();
        // Two independent noise draws differ by sqrt(2) sigma per pixel.
        assert!(err < 2f64.sqrt() * sigma, "seed {seed}: {err}");
    }
}

#[test]
fn ground_truth_is_the_focal_plane_on_noiseless_stacks() {
    for seed in 0..50 {
        let stack = synth_stack(&SceneSpec::texture(1.5, 64, 64, 1000 + seed), &psf(), -5.0, 5.0, 0.5, &NoiseModel::none()).unwrap();
        let edof = edof_fuse(&stack, 9).unwrap();
        let gt = gt_select(&stack, &edof).unwrap();
        assert_eq!(stack.dz_values()[gt], 0.0, "seed {seed}");
    }
}
