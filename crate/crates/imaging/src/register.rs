use crate::error::{ImagingError, Result};
use crate::image::Image;

/// Normalized cross-correlation of `moving(x, y)` against `fixed(x - dx, y - dy)`
/// over their overlap. `None` when either side of the overlap is flat.
pub fn shifted_ncc(moving: &Image, fixed: &Image, dx: isize, dy: isize) -> Option<f64> {
    let (w, h) = (moving.width() as isize, moving.height() as isize);
    let x0 = dx.max(0);
    let x1 = (w + dx).min(w);
    let y0 = dy.max(0);
    let y1 = (h + dy).min(h);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            sa += moving.get(x as usize, y as usize);
            sb += fixed.get((x - dx) as usize, (y - dy) as usize);
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let a = moving.get(x as usize, y as usize) - ma;
            let b = fixed.get((x - dx) as usize, (y - dy) as usize) - mb;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Integer translation `(dx, dy)` such that `moving(x, y) ~ fixed(x - dx, y - dy)`,
/// found by exhaustive normalized cross-correlation over `|dx|, |dy| <= max_shift`.
/// Ties prefer the smaller shift.
pub fn register_translation(moving: &Image, fixed: &Image, max_shift: usize) -> Result<(isize, isize)> {
    moving.ensure_same_shape(fixed)?;
    let m = max_shift as isize;
    let mut best: Option<((isize, isize), f64)> = None;
    for dy in -m..=m {
        for dx in -m..=m {
            let Some(score) = shifted_ncc(moving, fixed, dx, dy) else {
                continue;
            };
            let better = match best {
                None => true,
                Some(((bx, by), bs)) => {
                    score > bs || (score == bs && dx * dx + dy * dy < bx * bx + by * by)
                }
            };
            if better {
                best = Some(((dx, dy), score));
            }
        }
    }
    best.map(|(s, _)| s).ok_or_else(|| {
        ImagingError::Degenerate("no overlapping window with non-constant content".into())
    })
}

/// Undo a shift found by [`register_translation`].
pub fn align_to(moving: &Image, shift: (isize, isize)) -> Image {
    moving.shifted(-shift.0, -shift.1)
}
