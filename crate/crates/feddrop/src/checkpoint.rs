//! Binary checkpoints of a full-size model and its initialization.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset | size | field                                             |
//! |--------|------|---------------------------------------------------|
//! | 0      | 8    | magic `FDROPCKP`                                  |
//! | 8      | 4    | format version (`u32`, currently 1)               |
//! | 12     | 4    | number of parameter sets (`u32`, always 2)        |
//! | 16     | 40   | `input_dim, model_dim, hidden_dim, num_blocks, num_classes` as `u64` |
//! | 56     | 8·P  | trained parameters, `f64`                          |
//! | 56+8P  | 8·P  | initial parameters, `f64`                          |
//!
//! `P` is the architecture's parameter count. Each set is laid out in
//! declaration order: `input_w` (row-major), `input_b`, then per block `w1`,
//! `b1`, `w2`, `b2`, then `output_w`, `output_b`.

use std::fs;
use std::path::Path;

use feddrop_core::nn::{Arch, ModelParams};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FDROPCKP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 5 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Arch,
    pub params: ModelParams,
    pub init: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, init: ModelParams) -> Result<Self> {
        let arch = params.arch();
        params.check_congruent(&init)?;
        if params.hidden_dims().iter().any(|&h| h != arch.hidden_dim) {
            return Err(Error::Config("checkpoints hold full-size models only".into()));
        }
        Ok(Self { arch, params, init })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.arch.param_count();
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * p);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        let a = &self.arch;
        for d in [a.input_dim, a.model_dim, a.hidden_dim, a.num_blocks, a.num_classes] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for set in [&self.params, &self.init] {
            for t in set.tensors() {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("{} bytes is shorter than the header", bytes.len()));
        }
        if &bytes[..8] != MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(8);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        if u32_at(12) != 2 {
            return Err(format!("expected 2 parameter sets, found {}", u32_at(12)));
        }
        let dims: Vec<usize> = (0..5)
            .map(|i| usize::try_from(u64_at(16 + 8 * i)).map_err(|_| "dimension overflow".to_string()))
            .collect::<Result<_, _>>()?;
        let arch = Arch::new(dims[0], dims[1], dims[2], dims[3], dims[4]);
        arch.validate().map_err(|e| e.to_string())?;
        let p = arch.param_count();
        let expected = HEADER_LEN + 16 * p;
        if bytes.len() != expected {
            return Err(format!("expected {expected} bytes for {arch:?}, found {}", bytes.len()));
        }
        let read_set = |offset: usize| -> Result<ModelParams, String> {
            let flat: Vec<f64> = bytes[offset..offset + 8 * p]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let mut m = ModelParams::zeros(&arch);
            m.load_flat(&flat).map_err(|e| e.to_string())?;
            m.validate().map_err(|e| e.to_string())?;
            Ok(m)
        };
        let params = read_set(HEADER_LEN)?;
        let init = read_set(HEADER_LEN + 8 * p)?;
        Ok(Self { arch, params, init })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Checkpoint { path: path.to_path_buf(), msg })
    }
}
