//! Focus stacking and ground-truth plane selection.

use snapfocus_imaging::filter::convolve_separable_replicate;
use snapfocus_imaging::{sobel_sharpness, ssim, Image, MsssimConfig, ZStack};

use crate::error::{BenchError, Result};

/// Plane visiting order for tie-breaks: smaller |dz| first, then lower index.
/// Later candidates must be strictly better to win.
pub fn preference_order(dz_values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dz_values.len()).collect();
    order.sort_by(|&a, &b| dz_values[a].abs().total_cmp(&dz_values[b].abs()).then(a.cmp(&b)));
    order
}

/// Windowed squared-Sobel energy of one plane (box window of side `window`).
pub fn focus_energy(image: &Image, window: usize) -> Result<Image> {
    if window == 0 || window % 2 == 0 {
        return Err(BenchError::Config(format!("window {window} must be odd and positive")));
    }
    let grad = sobel_sharpness(image)?;
    let squared = grad.map(|g| g * g);
    let taps = vec![1.0 / window as f64; window];
    Ok(convolve_separable_replicate(&squared, &taps, &taps)?)
}

/// Per-pixel index of the plane with the highest focus energy.
pub fn edof_selection(stack: &ZStack, window: usize) -> Result<Vec<usize>> {
    if stack.is_empty() {
        return Err(BenchError::Data("empty stack".into()));
    }
    let energies = stack
        .planes()
        .iter()
        .map(|p| focus_energy(p, window))
        .collect::<Result<Vec<_>>>()?;
    let order = preference_order(stack.dz_values());
    let n = stack.width() * stack.height();
    Ok((0..n)
        .map(|px| {
            let mut best = order[0];
            for &i in &order[1..] {
                if energies[i].data()[px] > energies[best].data()[px] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Extended depth-of-field composite: each pixel is taken from its sharpest plane.
pub fn edof_fuse(stack: &ZStack, window: usize) -> Result<Image> {
    let selection = edof_selection(stack, window)?;
    let data = selection
        .iter()
        .enumerate()
        .map(|(px, &i)| stack.plane(i).data()[px])
        .collect();
    Ok(stack.plane(0).with_data(data)?)
}

/// Index of the plane most similar (single-scale SSIM) to the EDOF composite.
pub fn gt_select(stack: &ZStack, edof: &Image) -> Result<usize> {
    if stack.is_empty() {
        return Err(BenchError::Data("empty stack".into()));
    }
    let cfg = MsssimConfig::single_scale();
    let scores = stack
        .planes()
        .iter()
        .map(|p| ssim(p, edof, &cfg))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let order = preference_order(stack.dz_values());
    let mut best = order[0];
    for &i in &order[1..] {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(seed: f64) -> Image {
        Image::from_fn(16, 16, 0.325, |x, y| ((x as f64 * 0.7 + seed).sin() + (y as f64 * 1.3).cos()) * 0.5 + 1.0)
            .unwrap()
    }

    #[test]
    fn single_plane_is_returned() {
        let p = ramp(0.0);
        let stack = ZStack::new(vec![p.clone()], vec![1.5]).unwrap();
        assert_eq!(edof_fuse(&stack, 9).unwrap(), p);
        assert_eq!(gt_select(&stack, &p).unwrap(), 0);
    }

    #[test]
    fn identical_planes_prefer_smallest_defocus() {
        let p = ramp(0.3);
        let stack = ZStack::new(vec![p.clone(); 5], vec![-1.0, -0.5, 0.5, 1.0, 1.5]).unwrap();
        assert_eq!(gt_select(&stack, &p).unwrap(), 1);
        assert!(edof_selection(&stack, 3).unwrap().iter().all(|&i| i == 1));
    }

    #[test]
    fn plane_equal_to_edof_is_selected() {
        let planes: Vec<_> = (0..4).map(|k| ramp(k as f64)).collect();
        let stack = ZStack::new(planes.clone(), vec![-1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(gt_select(&stack, &planes[3]).unwrap(), 3);
    }

    #[test]
    fn empty_and_even_window_rejected() {
        let stack = ZStack::new(vec![ramp(0.0)], vec![0.0]).unwrap();
        assert!(edof_fuse(&stack, 4).is_err());
    }

    #[test]
    fn preference_order_ties() {
        assert_eq!(preference_order(&[-1.0, 0.5, 1.0, -0.5, 0.0]), vec![4, 1, 3, 0, 2]);
    }
}
