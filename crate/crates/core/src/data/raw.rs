//! Headerless little-endian float32 voxels (`{id}.f32`) with a JSON sidecar
//! (`{id}.json`) carrying the dimensions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    /// `[nx, ny, nz]`
    pub dims: [usize; 3],
    pub dtype: String,
    /// Generator seed, when the volume is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const DTYPE: &str = "f32le";

pub fn decode_sidecar(text: &str) -> Result<Sidecar> {
    let s: Sidecar = serde_json::from_str(text)?;
    if s.dtype != DTYPE {
        return Err(Error::Unsupported {
            what: "dtype",
            detail: format!("{:?}; only {DTYPE:?} is supported", s.dtype),
        });
    }
    if s.dims.contains(&0) {
        return Err(Error::parse(0, "dims", "zero-length axis"));
    }
    Ok(s)
}

pub fn decode(sidecar: &Sidecar, bytes: &[u8]) -> Result<Volume> {
    let n = sidecar
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(0, "dims", "voxel count overflows"))?;
    if bytes.len() != n {
        return Err(Error::parse(
            bytes.len().min(n),
            "data",
            format!("{} bytes, sidecar dims need {n}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    Volume::new(sidecar.dims, data)
}

pub fn encode(v: &Volume) -> Vec<u8> {
    v.data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Sidecar path for a `.f32` voxel file.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn read_volume(path: &Path) -> Result<(Volume, Sidecar)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(Error::at_path(&side))?;
    let sidecar = decode_sidecar(&text)?;
    let bytes = fs::read(path).map_err(Error::at_path(path))?;
    Ok((decode(&sidecar, &bytes)?, sidecar))
}

pub fn write_volume(path: &Path, v: &Volume, seed: Option<u64>) -> Result<()> {
    let sidecar = Sidecar {
        dims: v.dims,
        dtype: DTYPE.into(),
        seed,
    };
    fs::write(path, encode(v)).map_err(Error::at_path(path))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar)? + "\n";
    fs::write(&side, text).map_err(Error::at_path(&side))
}
