//! Parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "PHUNETCK"
//! version   u32
//! hdr_len   u32, then hdr_len bytes of JSON header
//! count     u32, then per tensor: name_len u32, name, rank u32, dims u64 * rank
//! blobs     f64 values of every tensor in table order
//! ```
//!
//! When the header's `moments` flag is set the table lists each parameter
//! three times: values, first moments, second moments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamTree};
use crate::optim::AdamState;
use crate::train::EpochRecord;

pub const MAGIC: &[u8; 8] = b"PHUNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    pub history: Vec<EpochRecord>,
    pub moments: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    epoch: usize,
    step: u64,
    moments: bool,
    history: Vec<EpochRecord>,
}

const MOMENT_PREFIXES: [&str; 2] = ["adam.m.", "adam.v."];

impl Checkpoint {
    /// Weights only, no optimizer state.
    pub fn of_params(params: ModelParams) -> Self {
        Checkpoint {
            params,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            moments: None,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.params.config.clone(),
            epoch: self.epoch,
            step: self.step,
            moments: self.moments.is_some(),
            history: self.history.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut tensors: Vec<(String, &Tensor)> = self.params.net.leaves();
        if let Some(st) = &self.moments {
            let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
            for (prefix, ts) in MOMENT_PREFIXES.iter().zip([&st.m, &st.v]) {
                if ts.len() != names.len() {
                    return Err(Error::dim("optimizer state does not match the parameters"));
                }
                tensors.extend(names.iter().map(|n| format!("{prefix}{n}")).zip(ts.iter()));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::parse(0, "magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Unsupported {
                what: "checkpoint version",
                detail: version.to_string(),
            });
        }
        let hlen = r.u32("header_len")? as usize;
        let at = r.pos;
        let header: Header =
            serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| Error::parse(at, "header", e.to_string()))?;
        header.model.validate()?;

        let mut expected = ModelParams::expected_shapes(&header.model);
        if header.moments {
            let base = expected.clone();
            for prefix in MOMENT_PREFIXES {
                expected.extend(base.iter().map(|(n, s)| (format!("{prefix}{n}"), s.clone())));
            }
        }
        let count_at = r.pos;
        let count = r.u32("count")? as usize;
        if count != expected.len() {
            return Err(Error::parse(
                count_at,
                "count",
                format!("{count} tensors, model needs {}", expected.len()),
            ));
        }
        let mut total = 0usize;
        for (name, shape) in &expected {
            let at = r.pos;
            let len = r.u32("name_len")? as usize;
            let got = r.take(len, "name")?;
            if got != name.as_bytes() {
                return Err(Error::parse(at, "name", format!("expected tensor {name}")));
            }
            let at = r.pos;
            let rank = r.u32("rank")? as usize;
            if rank != shape.len() {
                return Err(Error::parse(
                    at,
                    "rank",
                    format!("{name}: rank {rank}, expected {}", shape.len()),
                ));
            }
            for &d in shape {
                let at = r.pos;
                if r.u64("dim")? != d as u64 {
                    return Err(Error::parse(at, "dim", format!("{name}: expected shape {shape:?}")));
                }
            }
            total += shape.iter().product::<usize>();
        }
        let remaining = bytes.len() - r.pos;
        if remaining != total * 8 {
            return Err(Error::parse(
                r.pos,
                "data",
                format!("{remaining} bytes of values, table needs {}", total * 8),
            ));
        }
        let mut tensors = expected.iter().map(|(_, shape)| {
            let n: usize = shape.iter().product();
            let data = r.take(n * 8, "data").expect("length checked").chunks_exact(8);
            let data = data
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            Tensor::new(shape, data).expect("shape checked")
        });

        let mut params = ModelParams {
            net: crate::model::shape_tree(&header.model).map_params(&mut |_| Tensor::zeros(&[0])),
            config: header.model,
        };
        for (_, slot) in params.net.leaves_mut() {
            *slot = tensors.next().expect("counted");
        }
        let moments = header.moments.then(|| {
            let n = expected.len() / 3;
            AdamState {
                step: header.step,
                m: tensors.by_ref().take(n).collect(),
                v: tensors.by_ref().take(n).collect(),
            }
        });
        Ok(Checkpoint {
            params,
            epoch: header.epoch,
            step: header.step,
            history: header.history,
            moments,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()?).map_err(Error::at_path(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::at_path(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::at_path(path))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(self.pos, field, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, field)?.try_into().expect("eight bytes"),
        ))
    }
}
