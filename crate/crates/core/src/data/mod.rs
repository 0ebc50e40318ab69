//! Synthetic phantoms and bias fields, datasets, and volume file formats.

pub mod bias;
pub mod dataset;
pub mod nifti;
pub mod phantom;
pub mod raw;
pub mod volume;

use std::path::Path;

use crate::error::{Error, Result};

pub use bias::gen_bias;
pub use dataset::{make_dataset, make_phantom, replay, Dataset, DatasetManifest, Phantom};
pub use phantom::gen_phantom;
pub use volume::Volume;

/// Volume file formats, chosen by extension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// `.nii`
    Nifti,
    /// `.f32` with a `.json` sidecar
    Raw,
}

impl Format {
    pub fn of(path: &Path) -> Result<Format> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => Ok(Format::Nifti),
            Some("f32") => Ok(Format::Raw),
            _ => Err(Error::Unsupported {
                what: "volume format",
                detail: format!("{} (expected .nii or .f32)", path.display()),
            }),
        }
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match Format::of(path)? {
        Format::Nifti => nifti::read_volume(path),
        Format::Raw => Ok(raw::read_volume(path)?.0),
    }
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    match Format::of(path)? {
        Format::Nifti => nifti::write_volume(path, v),
        Format::Raw => raw::write_volume(path, v, None),
    }
}
