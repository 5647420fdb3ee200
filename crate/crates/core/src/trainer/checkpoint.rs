//! Binary checkpoint format.
//!
//! ```text
//! "GAFCKPT1" | u64 LE header length | JSON header | f32 LE arrays
//! ```
//!
//! The header lists every array with its name, shape and byte offset into
//! the array block. Arrays are the model parameters in model order, then the
//! first and second Adam moments in the same order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::Reader;
use crate::diffcore::{AdamConfig, DenseArray};
use crate::error::{Error, Result};
use crate::model::GafConfig;

const MAGIC: &[u8; 8] = b"GAFCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GafConfig,
    pub train: TrainConfig,
    pub iteration: u64,
    pub names: Vec<String>,
    pub params: Vec<DenseArray<f32>>,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub adam_m: Vec<DenseArray<f32>>,
    pub adam_v: Vec<DenseArray<f32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: u64,
    counter: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model: GafConfig,
    train: TrainConfig,
    iteration: u64,
    rng: RngState,
    adam: AdamHeader,
    arrays: Vec<ArrayEntry>,
}

fn format_err(section: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        section,
        detail: detail.into(),
    }
}

impl Checkpoint {
    fn array_names(&self) -> Vec<String> {
        let mut names = self.names.clone();
        names.extend(self.names.iter().map(|n| format!("adam.m.{n}")));
        names.extend(self.names.iter().map(|n| format!("adam.v.{n}")));
        names
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays: Vec<&DenseArray<f32>> = self
            .params
            .iter()
            .chain(&self.adam_m)
            .chain(&self.adam_v)
            .collect();
        let names = self.array_names();
        if names.len() != arrays.len() {
            return Err(format_err("arrays", "names, parameters and moments disagree in count"));
        }
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(arrays.len());
        for (name, a) in names.into_iter().zip(&arrays) {
            entries.push(ArrayEntry {
                name,
                shape: a.shape().to_vec(),
                offset,
            });
            offset += 4 * a.len() as u64;
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            train: self.train.clone(),
            iteration: self.iteration,
            rng: RngState {
                seed: self.train.seed,
                counter: self.iteration,
            },
            adam: AdamHeader {
                config: self.adam,
                step: self.adam_step,
            },
            arrays: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| format_err("header", e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in arrays {
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            if magic.starts_with(b"GAFCKPT") {
                let found = (magic[7] as char).to_digit(10).unwrap_or(0);
                return Err(Error::UnsupportedVersion {
                    found,
                    expected: CHECKPOINT_VERSION,
                });
            }
            return Err(format_err("magic", "not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(r.take(8, "header length")?.try_into().unwrap()) as usize;
        let raw = r.take(hlen, "header")?;
        let version = serde_json::from_slice::<serde_json::Value>(raw)
            .map_err(|e| format_err("header", e.to_string()))?
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| format_err("header", "missing format_version"))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::UnsupportedVersion {
                found: version as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: Header = serde_json::from_slice(raw).map_err(|e| format_err("header", e.to_string()))?;
        if header.rng.seed != header.train.seed || header.rng.counter != header.iteration {
            return Err(format_err("header", "rng state disagrees with train config"));
        }
        let n = header.arrays.len();
        if !n.is_multiple_of(3) {
            return Err(format_err("arrays", "expected parameters and two moment sets"));
        }
        let data_start = r.pos;
        let mut expected_offset = 0u64;
        let mut arrays = Vec::with_capacity(n);
        for e in &header.arrays {
            if e.offset != expected_offset {
                return Err(format_err("arrays", format!("{}: offset {} not contiguous", e.name, e.offset)));
            }
            let len: usize = e.shape.iter().product();
            let raw = r.take(4 * len, "arrays")?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(
                DenseArray::new(e.shape.clone(), data)
                    .map_err(|err| format_err("arrays", format!("{}: {err}", e.name)))?,
            );
            expected_offset += 4 * len as u64;
        }
        if r.pos != bytes.len() {
            return Err(format_err(
                "arrays",
                format!("{} trailing bytes", bytes.len() - data_start - expected_offset as usize),
            ));
        }
        let k = n / 3;
        let names: Vec<String> = header.arrays[..k].iter().map(|e| e.name.clone()).collect();
        let adam_v = arrays.split_off(2 * k);
        let adam_m = arrays.split_off(k);
        let ckpt = Self {
            model: header.model,
            train: header.train,
            iteration: header.iteration,
            names,
            params: arrays,
            adam: header.adam.config,
            adam_step: header.adam.step,
            adam_m,
            adam_v,
        };
        let listed: Vec<&str> = header.arrays.iter().map(|e| e.name.as_str()).collect();
        if ckpt.array_names() != listed {
            return Err(format_err("arrays", "array names are not parameters followed by moments"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
