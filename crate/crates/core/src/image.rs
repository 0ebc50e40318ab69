//! Single-channel 2D slices and binary masks, row-major.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "{} values do not fill a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Side length if the image is square with a power-of-two side.
    pub fn pow2_side(&self) -> Option<usize> {
        (self.height == self.width && self.height.is_power_of_two()).then_some(self.height)
    }

    pub fn require_pow2_square(&self) -> Result<usize> {
        self.pow2_side().ok_or_else(|| {
            Error::dim(format!(
                "expected a square power-of-two slice, got {}x{}",
                self.height, self.width
            ))
        })
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        if !self.same_shape(other) {
            return Err(Error::dim(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Values selected by `mask`, in row-major order.
    pub fn masked_values(&self, mask: &Mask) -> Result<Vec<f64>> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::dim("mask and image shapes differ"));
        }
        Ok(self
            .data
            .iter()
            .zip(mask.data())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "{} values do not fill a {height}x{width} mask",
                data.len()
            )));
        }
        Ok(Mask { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Mask { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn from_image(img: &Image) -> Mask {
        Mask {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| v > 0.5).collect(),
        }
    }
}
