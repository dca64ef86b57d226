use crate::error::{ImagingError, Result};
use crate::image::{Image, ZStack};

/// Mean and population standard deviation used for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    pub fn of(image: &Image) -> Result<Self> {
        let mean = image.mean();
        let std = image.std_dev();
        if !(std > 0.0) {
            return Err(ImagingError::Degenerate(
                "zero variance image cannot be z-scored".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, image: &Image) -> Image {
        image.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert(&self, image: &Image) -> Image {
        image.map(|v| v * self.std + self.mean)
    }
}

/// Zero mean, unit population variance.
pub fn normalize_zscore(image: &Image) -> Result<Image> {
    Ok(ZScore::of(image)?.apply(image))
}

/// Top-left corners of the tiles produced by [`crop_tiles`], row-major.
pub fn tile_origins(width: usize, height: usize, tile: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if tile == 0 || stride == 0 {
        return Err(ImagingError::InvalidArgument("tile and stride must be positive".into()));
    }
    if tile > width || tile > height {
        return Err(ImagingError::InvalidArgument(format!(
            "tile {tile} larger than {width}x{height} image"
        )));
    }
    let nx = (width - tile) / stride + 1;
    let ny = (height - tile) / stride + 1;
    Ok((0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i * stride, j * stride)))
        .collect())
}

pub fn crop_tiles(image: &Image, tile: usize, stride: usize) -> Result<Vec<Image>> {
    tile_origins(image.width(), image.height(), tile, stride)?
        .into_iter()
        .map(|(x, y)| image.crop(x, y, tile, tile))
        .collect()
}

fn rot90(image: &Image) -> Image {
    let n = image.width();
    Image::from_fn(n, n, image.pixel_pitch(), |x, y| image.get(n - 1 - y, x)).expect("square")
}

fn flip_horizontal(image: &Image) -> Image {
    let (w, h) = (image.width(), image.height());
    Image::from_fn(w, h, image.pixel_pitch(), |x, y| image.get(w - 1 - x, y)).expect("same shape")
}

/// Element `k` of the dihedral group on a square image: an optional horizontal
/// flip (`k >= 4`) followed by `k % 4` quarter turns.
pub fn dihedral(image: &Image, k: usize) -> Result<Image> {
    if image.width() != image.height() {
        return Err(ImagingError::InvalidDimensions(format!(
            "dihedral transforms need a square image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut out = if k % 8 >= 4 {
        flip_horizontal(image)
    } else {
        image.clone()
    };
    for _ in 0..k % 4 {
        out = rot90(&out);
    }
    Ok(out)
}

/// Index of the inverse of [`dihedral`] element `k`.
pub fn dihedral_inverse(k: usize) -> usize {
    let k = k % 8;
    if k >= 4 {
        k
    } else {
        (4 - k) % 4
    }
}

/// All eight flip/rotation variants in index order.
pub fn augment8(image: &Image) -> Result<Vec<Image>> {
    (0..8).map(|k| dihedral(image, k)).collect()
}

/// Per-pixel maximum over planes `from..to` (end exclusive).
pub fn mip(stack: &ZStack, from: usize, to: usize) -> Result<Image> {
    if from >= to || to > stack.len() {
        return Err(ImagingError::InvalidArgument(format!(
            "empty or out-of-range plane range {from}..{to} of {}",
            stack.len()
        )));
    }
    let mut out = stack.plane(from).clone();
    for plane in &stack.planes()[from + 1..to] {
        for (o, &v) in out.data_mut().iter_mut().zip(plane.data()) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}
