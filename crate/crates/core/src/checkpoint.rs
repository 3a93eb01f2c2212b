//! Binary parameter files.
//!
//! `"DINN"`, version `u32`, then one record per parameter until end of file:
//! name length `u32`, UTF-8 name, rank `u32`, extents `u32`, values `f32`.
//! Little-endian throughout. Parameters appear in layout order (feature
//! extractor, generator, discriminator). Values are always stored as `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::synth::io::Reader;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DINN";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint for a model built with `config`. Every layer must be
/// present with exactly the shape `config` implies.
pub fn decode<T: Real>(buf: &[u8], config: &ModelConfig) -> Result<ModelParams<T>> {
    let mut r = Reader::new(buf, "checkpoint");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let mut named = Vec::new();
    while !r.at_end() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::Format("checkpoint parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape.iter().product::<usize>();
        if shape.contains(&0) || count.saturating_mul(4) > buf.len() {
            return Err(Error::Format(format!("parameter {name} has invalid extents {shape:?}")));
        }
        let data = (0..count)
            .map(|_| r.f32().map(|v| T::from_f64(v as f64)))
            .collect::<Result<Vec<_>>>()?;
        named.push((name, Tensor::new(shape, data)?));
    }
    ModelParams::from_named(config, named)
}

pub fn save<T: Real>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path, config: &ModelConfig) -> Result<ModelParams<T>> {
    decode(&fs::read(path)?, config)
}
