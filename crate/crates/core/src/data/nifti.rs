//! Single-file NIfTI-1 (`.nii`), restricted to little-endian 3D float32.

use std::fs;
use std::path::Path;

use super::volume::Volume;
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const DATA_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";
pub const DT_FLOAT32: i16 = 16;

const SIZEOF_HDR: usize = 0;
const DIM: usize = 40;
const DATATYPE: usize = 70;
const BITPIX: usize = 72;
const PIXDIM: usize = 76;
const VOX_OFFSET: usize = 108;
const SCL_SLOPE: usize = 112;
const MAGIC_AT: usize = 344;

fn i16_at(b: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([b[at], b[at + 1]])
}

fn i32_at(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().expect("four bytes"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("four bytes"))
}

/// Parses a complete `.nii` image held in memory.
pub fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < DATA_OFFSET {
        return Err(Error::parse(
            bytes.len(),
            "header",
            format!("truncated: {} bytes, need at least {DATA_OFFSET}", bytes.len()),
        ));
    }
    let sizeof_hdr = i32_at(bytes, SIZEOF_HDR);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::Unsupported {
                what: "byte order",
                detail: "big-endian header".into(),
            });
        }
        return Err(Error::parse(
            SIZEOF_HDR,
            "sizeof_hdr",
            format!("{sizeof_hdr}, expected 348"),
        ));
    }
    if &bytes[MAGIC_AT..MAGIC_AT + 4] != MAGIC {
        return Err(Error::parse(
            MAGIC_AT,
            "magic",
            format!("{:?}, expected \"n+1\\0\"", &bytes[MAGIC_AT..MAGIC_AT + 4]),
        ));
    }
    let datatype = i16_at(bytes, DATATYPE);
    if datatype != DT_FLOAT32 {
        return Err(Error::Unsupported {
            what: "datatype",
            detail: format!("code {datatype} at offset {DATATYPE}; only 16 (float32) is supported"),
        });
    }
    let bitpix = i16_at(bytes, BITPIX);
    if bitpix != 32 {
        return Err(Error::parse(BITPIX, "bitpix", format!("{bitpix}, expected 32")));
    }
    let ndim = i16_at(bytes, DIM);
    if ndim != 3 {
        return Err(Error::Unsupported {
            what: "dimensionality",
            detail: format!("dim[0] = {ndim} at offset {DIM}; only 3 is supported"),
        });
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = DIM + 2 * (i + 1);
        let v = i16_at(bytes, at);
        if v < 1 {
            return Err(Error::parse(at, "dim", format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    let mut pixdim = [1f32; 3];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = f32_at(bytes, PIXDIM + 4 * (i + 1));
    }
    let vox = f32_at(bytes, VOX_OFFSET);
    if !(vox >= DATA_OFFSET as f32) || vox.fract() != 0.0 || vox > bytes.len() as f32 {
        return Err(Error::parse(
            VOX_OFFSET,
            "vox_offset",
            format!("{vox} is not a valid data offset"),
        ));
    }
    let vox = vox as usize;
    let n = dims[0] * dims[1] * dims[2];
    let need = n * 4;
    let payload = &bytes[vox..];
    if payload.len() < need {
        return Err(Error::parse(
            vox + payload.len(),
            "data",
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let data = payload[..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    let mut v = Volume::new(dims, data)?;
    v.pixdim = pixdim;
    Ok(v)
}

pub fn encode(v: &Volume) -> Result<Vec<u8>> {
    let mut dim = [0i16; 4];
    dim[0] = 3;
    for i in 0..3 {
        dim[i + 1] = i16::try_from(v.dims[i])
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| Error::dim(format!("dimension {} does not fit NIfTI-1", v.dims[i])))?;
    }
    let mut out = vec![0u8; DATA_OFFSET + 4 * v.data.len()];
    out[SIZEOF_HDR..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    for (i, d) in dim.iter().chain(&[1, 1, 1, 1]).enumerate() {
        out[DIM + 2 * i..DIM + 2 * i + 2].copy_from_slice(&d.to_le_bytes());
    }
    out[DATATYPE..DATATYPE + 2].copy_from_slice(&DT_FLOAT32.to_le_bytes());
    out[BITPIX..BITPIX + 2].copy_from_slice(&32i16.to_le_bytes());
    let pix = [1.0, v.pixdim[0], v.pixdim[1], v.pixdim[2], 1.0, 1.0, 1.0, 1.0f32];
    for (i, p) in pix.iter().enumerate() {
        out[PIXDIM + 4 * i..PIXDIM + 4 * i + 4].copy_from_slice(&p.to_le_bytes());
    }
    out[VOX_OFFSET..VOX_OFFSET + 4].copy_from_slice(&(DATA_OFFSET as f32).to_le_bytes());
    out[SCL_SLOPE..SCL_SLOPE + 4].copy_from_slice(&1f32.to_le_bytes());
    out[MAGIC_AT..MAGIC_AT + 4].copy_from_slice(MAGIC);
    for (i, x) in v.data.iter().enumerate() {
        let at = DATA_OFFSET + 4 * i;
        out[at..at + 4].copy_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(Error::at_path(path))?;
    decode(&bytes)
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    fs::write(path, encode(v)?).map_err(Error::at_path(path))
}
