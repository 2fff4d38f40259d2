//! Model checkpoints (`CDPM0001`).
//!
//! Layout: magic, a length-prefixed JSON block holding the model config,
//! then each parameter section in canonical order as name, shape, and f32
//! values (all integers and floats little-endian). Values are stored as f32
//! regardless of the in-memory precision; loading re-checks every section
//! against the canonical layout derived from the embedded config, so a
//! checkpoint that decodes is structurally sound. Encoding is canonical:
//! encode -> decode -> encode reproduces the bytes exactly.

use std::path::Path;

use crate::bytes::{check_claim, ByteReader};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamSection};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CDPM0001";

pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let config_json =
        serde_json::to_vec(params.config()).expect("model config serializes infallibly");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&(params.sections().len() as u32).to_le_bytes());
    for sec in params.sections() {
        let name = sec.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(sec.shape.len() as u32).to_le_bytes());
        for &d in &sec.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &sec.values {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let config_len = r.u32("config length")?;
    let config_len = check_claim(&r, config_len as u64, 1, "config block")?;
    let config_offset = r.offset();
    let config_bytes = r.take(config_len, "config block")?;
    let config: ModelConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::format(config_offset, format!("config block: {e}")))?;
    config.validate()?;

    let specs = config.sections();
    let section_count = r.u32("section count")? as usize;
    if section_count != specs.len() {
        return Err(Error::ConfigMismatch {
            expected: format!("{} parameter sections", specs.len()),
            found: format!("{section_count} parameter sections"),
        });
    }

    let mut sections = Vec::with_capacity(specs.len());
    for spec in &specs {
        let name_len = r.u32("section name length")?;
        let name_len = check_claim(&r, name_len as u64, 1, "section name")?;
        let name_offset = r.offset();
        let name_bytes = r.take(name_len, "section name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format(name_offset, "section name is not UTF-8"))?
            .to_string();
        let rank = r.u32("section rank")? as usize;
        if rank > 8 {
            return Err(Error::format(r.offset(), format!("implausible section rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("section dimension")? as usize);
        }
        if name != spec.name || shape != spec.shape {
            return Err(Error::ConfigMismatch {
                expected: format!("section {:?} with shape {:?}", spec.name, spec.shape),
                found: format!("section {name:?} with shape {shape:?}"),
            });
        }
        let len = check_claim(&r, spec.len() as u64, 4, "section values")?;
        let values_offset = r.offset();
        let raw = r.take(len * 4, "section values")?;
        let mut values = Vec::with_capacity(len);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    values_offset + i as u64 * 4,
                    format!("non-finite value in section {:?}", spec.name),
                ));
            }
            values.push(v);
        }
        sections.push(ParamSection { name, shape, values });
    }
    r.finish()?;
    ModelParams::from_sections(config, sections)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}
