use crate::numerics::Tensor;

use super::DataError;

/// RGB image with planar channel-major samples in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if data.len() != 3 * height * width {
            return Err(DataError::Shape(format!("{height}x{width} RGB needs {} samples, got {}", 3 * height * width, data.len())));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Image { height, width, data: vec![v; 3 * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.pixels()..][..self.pixels()]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, 3, self.height, self.width], self.data.clone()).expect("consistent image")
    }

    /// Image from one batch item of a `(n, 3, H, W)` tensor, clamped to [0, 1].
    pub fn from_tensor(t: &Tensor<f32>, item: usize) -> Result<Self, DataError> {
        let [n, c, h, w] = t.dims4("image").map_err(|e| DataError::Shape(e.to_string()))?;
        if c != 3 || item >= n {
            return Err(DataError::Shape(format!("cannot take item {item} of a {:?} tensor as RGB", t.shape())));
        }
        let data = t.data()[item * 3 * h * w..][..3 * h * w].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image::new(h, w, data)
    }

    /// `size x size` window at `(top, left)`, optionally mirrored.
    pub fn crop(&self, top: usize, left: usize, size: usize, flip: bool) -> Result<Self, DataError> {
        if top + size > self.height || left + size > self.width {
            return Err(DataError::Shape(format!("crop {size} at ({top}, {left}) exceeds {}x{}", self.height, self.width)));
        }
        let mut data = Vec::with_capacity(3 * size * size);
        for c in 0..3 {
            for y in 0..size {
                let row = &self.plane(c)[(top + y) * self.width + left..][..size];
                if flip {
                    data.extend(row.iter().rev());
                } else {
                    data.extend_from_slice(row);
                }
            }
        }
        Image::new(size, size, data)
    }

    pub fn center_crop(&self, size: usize) -> Result<Self, DataError> {
        self.crop((self.height.saturating_sub(size)) / 2, (self.width.saturating_sub(size)) / 2, size, false)
    }
}

/// Stacks equally sized images into an `(n, 3, H, W)` batch.
pub fn stack(images: &[&Image]) -> Result<Tensor<f32>, DataError> {
    let first = images.first().ok_or_else(|| DataError::Shape("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for im in images {
        if (im.height, im.width) != (h, w) {
            return Err(DataError::Shape(format!("batch mixes {h}x{w} and {}x{}", im.height, im.width)));
        }
        data.extend_from_slice(&im.data);
    }
    Tensor::new(vec![images.len(), 3, h, w], data).map_err(|e| DataError::Shape(e.to_string()))
}
