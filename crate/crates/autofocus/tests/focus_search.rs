use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapfocus_autofocus::*;
use snapfocus_imaging::Image;
use snapfocus_optics::{synth_scene, synth_stack, NoiseModel, PsfModel, SceneSpec};

fn scene_spec(i: u64, size: usize) -> SceneSpec {
    if i % 2 == 0 {
        SceneSpec::beads(6, size, size, i)
    } else {
        SceneSpec::texture(2.0, size, size, i)
    }
}

fn random_image(seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(3..20), rng.random_range(3..20));
    let data = (0..w * h).map(|_| rng.random_range(0.1..5.0)).collect();
    Image::new(w, h, 1.0, data).unwrap()
}

#[test]
fn nvar_is_variance_over_mean() {
    for seed in 0..20 {
        let img = random_image(seed);
        let std = focus_metric(&img, FocusCriterion::Std).unwrap();
        let nvar = focus_metric(&img, FocusCriterion::Nvar).unwrap();
        let want = std * std / img.mean();
        assert!((nvar - want).abs() <= 1e-9 * want.abs().max(1.0), "{nvar} vs {want}");
    }
}

#[test]
fn vollath_depends_on_pixel_order() {
    let img = Image::new(1, 4, 1.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let perm = Image::new(1, 4, 1.0, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
    for c in [FocusCriterion::Vol4, FocusCriterion::Vol5] {
        assert_ne!(focus_metric(&img, c).unwrap(), focus_metric(&perm, c).unwrap());
    }
}

#[test]
fn every_criterion_peaks_at_focus() {
    let model = PsfModel::default();
    for i in 0..20 {
        let stack = synth_stack(&scene_spec(i, 64), &model, -5.0, 5.0, 0.5, &NoiseModel::none()).unwrap();
        let mut stage = VirtualStage::from_stack(stack.clone(), 0.0);
        for c in FocusCriterion::ALL {
            let curve = focus_curve(&mut stage, c, stack.dz_values()).unwrap();
            let best = curve[argmax_by_z(&curve).unwrap()].0;
            assert!(best.abs() <= 0.5, "scene {i} {c}: peak at {best}");
        }
    }
}

#[test]
fn brent_matches_fine_grid() {
    let model = PsfModel::default();
    let cfg = SearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..2 {
        let scene = synth_scene(&scene_spec(i, 96)).unwrap();
        for c in [FocusCriterion::Vol5, FocusCriterion::Nvar] {
            let mut stage = VirtualStage::from_scene(scene.clone(), model, 0.7, 15.0).unwrap();
            let start = 0.7 + rng.random_range(-4.0..4.0);
            stage.move_to(start).unwrap();
            let result = brent_search(&mut stage, c, &cfg).unwrap();
            assert_eq!(result.acquisitions, result.evaluations);
            assert_eq!(result.trace.len(), result.evaluations);
            assert!(result.evaluations >= 5 && result.evaluations <= 25, "{}", result.evaluations);

            let grid: Vec<f64> = (0..=1000).map(|k| start - 10.0 + 0.02 * k as f64).collect();
            let mut oracle = VirtualStage::from_scene(scene.clone(), model, 0.7, 15.0).unwrap();
            let curve = focus_curve(&mut oracle, c, &grid).unwrap();
            let z_grid = curve[argmax_by_z(&curve).unwrap()].0;
            assert!((result.z_star - z_grid).abs() <= cfg.tolerance, "{c}: {} vs {z_grid}", result.z_star);
        }
    }
}

#[test]
fn bench_protocol_shape() {
    let model = PsfModel::default();
    let scenes: Vec<Image> = (0..4).map(|i| synth_scene(&scene_spec(i, 96)).unwrap()).collect();
    let cfg = BenchConfig::default();
    let rows = bench_autofocus(
        |fov| {
            VirtualStage::from_scene(scenes[fov].clone(), model, 0.0, 15.0)?.with_latency(0.0)
        },
        &FocusCriterion::ALL,
        &cfg,
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.runs, 16);
        assert!(r.mean_time_s > 0.0);
        assert!(r.mean_acquisitions >= 5.0);
    }
    assert_eq!(format_bench_csv(&rows).lines().count(), 5);
}

proptest! {
    #[test]
    fn spread_criteria_ignore_pixel_order(seed in any::<u64>()) {
        let img = random_image(seed);
        let mut data = img.data().to_vec();
        data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 7));
        let shuffled = img.with_data(data).unwrap();
        for c in [FocusCriterion::Std, FocusCriterion::Nvar] {
            let a = focus_metric(&img, c).unwrap();
            let b = focus_metric(&shuffled, c).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn search_stays_in_range_and_budget(seed in 0u64..1000, budget in 3usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let peak = rng.random_range(-3.0..3.0);
        let r = brent_maximize(|z| Ok(-(z - peak).abs().powf(1.5)), -4.0, 0.0, 4.0, 0.1, budget).unwrap();
        prop_assert!(r.trace.len() <= budget);
        prop_assert!((-4.0..=4.0).contains(&r.z));
    }
}
