use snapfocus_imaging::Image;

use crate::error::{NetError, Result};

/// Dense `(batch, channels, height, width)` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NetError::Shape(format!("{shape:?} needs {} values, got {}", shape.iter().product::<usize>(), data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled([1, 1, 1, 1], value)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack single-channel images into a `(n, 1, h, w)` batch.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| NetError::Shape("empty batch".into()))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(images.len() * w * h);
        for img in images {
            if img.width() != w || img.height() != h {
                return Err(NetError::Shape("batch images differ in size".into()));
            }
            data.extend_from_slice(img.data());
        }
        Self::new([images.len(), 1, h, w], data)
    }

    /// Channel `c` of sample `n` as an image.
    pub fn to_image(&self, n: usize, c: usize, pixel_pitch: f64) -> Result<Image> {
        let [_, cs, h, w] = self.shape;
        let start = (n * cs + c) * h * w;
        Ok(Image::new(w, h, pixel_pitch, self.data[start..start + h * w].to_vec())?)
    }
}
