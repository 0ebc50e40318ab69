//! A stack of equally sized slices stored as 32-bit floats.

use crate::error::{Error, Result};
use crate::image::Image;

/// Voxels in x-fastest order; slices run along the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    /// `[nx, ny, nz]`
    pub dims: [usize; 3],
    /// Voxel spacing per axis.
    pub pixdim: [f32; 3],
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::dim("volume dimensions overflow"))?;
        if n != data.len() {
            return Err(Error::dim(format!(
                "{} voxels do not fill {}x{}x{}",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        Ok(Volume {
            dims,
            pixdim: [1.0; 3],
            data,
        })
    }

    /// Stacks slices (height = ny, width = nx), rounding to `f32`.
    pub fn from_slices(slices: &[Image]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::contract("a volume needs at least one slice"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(h * w * slices.len());
        for s in slices {
            if !s.same_shape(first) {
                return Err(Error::dim("slices differ in shape"));
            }
            data.extend(s.data().iter().map(|&v| v as f32));
        }
        Self::new([w, h, slices.len()], data)
    }

    pub fn num_slices(&self) -> usize {
        self.dims[2]
    }

    pub fn slice(&self, z: usize) -> Result<Image> {
        let [nx, ny, nz] = self.dims;
        if z >= nz {
            return Err(Error::dim(format!("slice {z} of {nz}")));
        }
        let plane = nx * ny;
        let data = self.data[z * plane..(z + 1) * plane]
            .iter()
            .map(|&v| v as f64)
            .collect();
        Image::new(ny, nx, data)
    }

    pub fn slices(&self) -> Result<Vec<Image>> {
        (0..self.num_slices()).map(|z| self.slice(z)).collect()
    }
}
