//! Dense row-major tensors and the image primitives built on them.
//!
//! Images are rank-3 tensors laid out as (height, width, channels), channel
//! fastest. Convolution kernels are rank-4 (kernel_h, kernel_w, in, out).

mod conv;
mod flt1;
mod image;

pub use conv::{conv2d, conv2d_grads, conv_output_extent, max_pool2d, max_pool2d_backward};
pub use flt1::{read_flt1, read_flt1_file, write_flt1, write_flt1_file, FLT1_MAGIC};
pub use image::{gaussian_blur, gaussian_kernel, lerp_images, resize_bilinear};

use crate::error::{invalid, shape_err, Result};
use crate::Scalar;

/// Ordered list of extents, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return invalid("shape must have rank >= 1");
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return invalid(format!("shape {dims:?} has a zero extent at axis {pos}"));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return shape_err(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: &[usize], value: T) -> Self {
        let shape = Shape::new(dims).expect("tensor extents must be >= 1");
        let n = shape.numel();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let shape = Shape::new(dims).expect("tensor extents must be >= 1");
        let data = (0..shape.numel()).map(&mut f).collect();
        Tensor { shape, data }
    }

    pub fn image(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(&[height, width, channels], data)
    }

    pub(crate) fn from_f64(dims: &[usize], data: Vec<f64>) -> Self {
        let shape = Shape::new(dims).expect("tensor extents must be >= 1");
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data: data.into_iter().map(T::lit).collect() }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub(crate) fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// (height, width, channels) of a rank-3 tensor.
    pub fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match *self.dims() {
            [h, w, c] => Ok((h, w, c)),
            _ => shape_err(format!("expected a rank-3 image, got shape {}", self.shape)),
        }
    }

    pub fn height(&self) -> usize {
        self.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.dims()[2]
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        let d = self.dims();
        self.data[(y * d[1] + x) * d[2] + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let (w, ch) = (self.dims()[1], self.dims()[2]);
        self.data[(y * w + x) * ch + c] = v;
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        Self::from_vec(dims, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("shape {} does not match {}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Per-channel mean of a rank-3 image.
    pub fn channel_means(&self) -> Result<Vec<f64>> {
        let (h, w, c) = self.image_dims()?;
        let mut acc = vec![0.0; c];
        for px in self.data.chunks_exact(c) {
            for (a, v) in acc.iter_mut().zip(px) {
                *a += v.as_f64();
            }
        }
        Ok(acc.into_iter().map(|s| s / (h * w) as f64).collect())
    }

    /// Copies the `height × width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (h, w, c) = self.image_dims()?;
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return shape_err(format!(
                "crop {height}x{width} at ({top},{left}) does not fit image {h}x{w}"
            ));
        }
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let row = (y * w + left) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Self::image(height, width, c, data)
    }

    /// Centered `height × width` window; odd slack puts the extra pixel after.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Self> {
        let (h, w, _) = self.image_dims()?;
        if height > h || width > w {
            return shape_err(format!("center crop {height}x{width} larger than {h}x{w}"));
        }
        self.crop((h - height) / 2, (w - width) / 2, height, width)
    }

    /// Adds `scale * patch` into the region whose top-left corner is `(top, left)`.
    pub fn add_patch(&mut self, patch: &Self, top: usize, left: usize, scale: f64) -> Result<()> {
        let (h, w, c) = self.image_dims()?;
        let (ph, pw, pc) = patch.image_dims()?;
        if pc != c || top + ph > h || left + pw > w {
            return shape_err(format!(
                "patch {} at ({top},{left}) does not fit image {}",
                patch.shape, self.shape
            ));
        }
        for y in 0..ph {
            let dst = ((top + y) * w + left) * c;
            let src = y * pw * c;
            for i in 0..pw * c {
                let v = self.data[dst + i].as_f64() + scale * patch.data[src + i].as_f64();
                self.data[dst + i] = T::lit(v);
            }
        }
        Ok(())
    }
}
