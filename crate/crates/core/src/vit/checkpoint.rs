//! `DPCK` checkpoint files.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! "DPCK"  u32 version (=1)
//! model config as `key=value\n` lines, terminated by one NUL byte
//! for each tensor in parameter-layout order:
//!     u32 rank, rank × u32 dims, f32 data (row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::ViTParams;
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DPCK";
pub const VERSION: u32 = 1;

pub fn encode(params: &ViTParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(params.config.to_text().as_bytes());
    out.push(0);
    for t in &params.tensors {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ViTParams<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, VERSION)?;
    let rest = &bytes[r.pos()..];
    let Some(nul) = rest.iter().position(|&b| b == 0) else {
        return r.fail("unterminated config block");
    };
    let text = std::str::from_utf8(&rest[..nul]).map_err(|_| Error::Parse {
        offset: r.pos() as u64,
        msg: "config block is not UTF-8".into(),
    })?;
    let config_at = r.pos();
    let config = ModelConfig::from_text(text).map_err(|e| Error::Parse {
        offset: config_at as u64,
        msg: e.to_string(),
    })?;
    r.take(nul + 1, "config block")?;
    let layout = super::params::param_layout(&config);
    let mut tensors = Vec::with_capacity(layout.len());
    for spec in &layout {
        let at = r.pos();
        let rank = r.u32_le("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32_le("tensor dim")? as usize);
        }
        if shape != spec.shape {
            return Err(Error::Parse {
                offset: at as u64,
                msg: format!(
                    "{}: expected shape {:?}, found {:?}",
                    spec.name, spec.shape, shape
                ),
            });
        }
        let data = r.f32_vec_le(shape.iter().product(), &spec.name)?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if !r.at_end() {
        return r.fail("trailing bytes after last tensor");
    }
    ViTParams::from_tensors(config, tensors)
}

pub fn save(params: &ViTParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ViTParams<f32>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
