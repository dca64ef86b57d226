use crate::error::{ImagingError, Result};

/// A single-channel raster of real intensities, stored row-major.
///
/// Row index `y` corresponds to the `m` axis of the focus criteria and column
/// index `x` to the `n` axis. `pixel_pitch` is the physical sampling distance
/// in micrometers per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixel_pitch: f64,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixel_pitch: f64, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions(format!(
                "{width}x{height} has a zero dimension"
            )));
        }
        if data.len() != width * height {
            return Err(ImagingError::InvalidDimensions(format!(
                "{width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(ImagingError::InvalidArgument(format!(
                "pixel pitch must be positive, got {pixel_pitch}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, pixel_pitch: f64, value: f64) -> Result<Self> {
        Self::new(width, height, pixel_pitch, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        pixel_pitch: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, pixel_pitch, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, self.pixel_pitch, data)
    }

    pub fn with_pitch(mut self, pixel_pitch: f64) -> Result<Self> {
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(ImagingError::InvalidArgument(format!(
                "pixel pitch must be positive, got {pixel_pitch}"
            )));
        }
        self.pixel_pitch = pixel_pitch;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(ImagingError::DimensionMismatch {
                a_width: self.width,
                a_height: self.height,
                b_width: other.width,
                b_height: other.height,
            })
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        let var = self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.len() as f64;
        var.sqrt()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy out the `width` x `height` region whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(ImagingError::InvalidArgument(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Self::new(width, height, self.pixel_pitch, data)
    }

    /// Symmetric border crop used by the boundary-cropped metrics.
    pub fn crop_border(&self, border: usize) -> Result<Self> {
        if 2 * border >= self.width || 2 * border >= self.height {
            return Err(ImagingError::InvalidArgument(format!(
                "border {border} too large for {}x{}",
                self.width, self.height
            )));
        }
        self.crop(
            border,
            border,
            self.width - 2 * border,
            self.height - 2 * border,
        )
    }

    /// Integer translation with edge replication: `out(x, y) = self(x - dx, y - dy)`.
    pub fn shifted(&self, dx: isize, dy: isize) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.data[y * self.width + x] = self.get_clamped(x as isize - dx, y as isize - dy);
            }
        }
        out
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.clone()
        })
    }
}

/// An ordered set of planes of one field of view, tagged with axial offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ZStack {
    planes: Vec<Image>,
    dz_values: Vec<f64>,
    reference_index: Option<usize>,
}

impl ZStack {
    pub fn new(planes: Vec<Image>, dz_values: Vec<f64>) -> Result<Self> {
        if planes.is_empty() {
            return Err(ImagingError::InvalidArgument("empty stack".into()));
        }
        if planes.len() != dz_values.len() {
            return Err(ImagingError::InvalidArgument(format!(
                "{} planes but {} dz values",
                planes.len(),
                dz_values.len()
            )));
        }
        let first = &planes[0];
        for p in &planes[1..] {
            first.ensure_same_shape(p)?;
            if p.pixel_pitch() != first.pixel_pitch() {
                return Err(ImagingError::InvalidArgument(
                    "planes disagree on pixel pitch".into(),
                ));
            }
        }
        if dz_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ImagingError::InvalidArgument(
                "dz values must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            planes,
            dz_values,
            reference_index: None,
        })
    }

    pub fn with_reference(mut self, index: usize) -> Result<Self> {
        if index >= self.planes.len() {
            return Err(ImagingError::InvalidArgument(format!(
                "reference index {index} out of {} planes",
                self.planes.len()
            )));
        }
        self.reference_index = Some(index);
        Ok(self)
    }

    pub fn planes(&self) -> &[Image] {
        &self.planes
    }

    pub fn plane(&self, index: usize) -> &Image {
        &self.planes[index]
    }

    pub fn dz_values(&self) -> &[f64] {
        &self.dz_values
    }

    pub fn reference_index(&self) -> Option<usize> {
        self.reference_index
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.planes[0].pixel_pitch()
    }

    /// Index of the plane whose dz is closest to `dz`; ties go to the lower index.
    pub fn nearest_index(&self, dz: f64) -> usize {
        let mut best = 0;
        for (i, &z) in self.dz_values.iter().enumerate() {
            if (z - dz).abs() < (self.dz_values[best] - dz).abs() {
                best = i;
            }
        }
        best
    }

    pub fn map_planes(&self, mut f: impl FnMut(&Image) -> Result<Image>) -> Result<Self> {
        let planes = self.planes.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(planes, self.dz_values.clone())?;
        out.reference_index = self.reference_index;
        Ok(out)
    }
}
