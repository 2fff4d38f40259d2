//! On-disk encodings for clouds and slice tensors.
//!
//! Three formats live here:
//!
//! * plain text clouds: one `x y z` triple per line, `#` comments, blank
//!   lines ignored; errors carry 1-based line numbers;
//! * binary clouds (`PCLD0001`): magic, point count as u64, then
//!   `count * 3` little-endian f32 coordinates;
//! * slice-tensor caches (`SLCT0001`): magic, dimensions and source id,
//!   per-slice counts as u32, feature data as f32, then the mask packed
//!   LSB-first into bytes.
//!
//! Every multi-byte integer and float is little-endian. Decoders validate
//! structure before returning and report the byte offset of the first
//! problem; encode -> decode -> encode reproduces input bytes exactly.

use std::path::Path;

use crate::bytes::{check_claim, ByteReader};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud3D, SliceTensor};

pub const CLOUD_MAGIC: &[u8; 8] = b"PCLD0001";
pub const SLICE_MAGIC: &[u8; 8] = b"SLCT0001";

// ── Text clouds ──────────────────────────────────────────────────────────

/// Parses the text cloud format. `source_id` names the cloud (loaders pass
/// the file stem). Anything after `#` on a line is a comment.
pub fn parse_cloud_text(text: &str, source_id: &str) -> Result<PointCloud3D> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut coords = [0.0f64; 3];
        for (a, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite coordinate {field:?}"),
                });
            }
            coords[a] = v;
        }
        points.push(coords);
    }
    PointCloud3D::new(points, source_id)
}

/// Renders a cloud in the text format, one point per line.
pub fn render_cloud_text(cloud: &PointCloud3D) -> String {
    let mut out = String::new();
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

pub fn read_cloud_text(path: &Path) -> Result<PointCloud3D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud_text(&text, &file_stem(path))
}

pub fn write_cloud_text(cloud: &PointCloud3D, path: &Path) -> Result<()> {
    std::fs::write(path, render_cloud_text(cloud)).map_err(|e| Error::io(path, e))
}

// ── Binary clouds ────────────────────────────────────────────────────────

/// Encodes a cloud as `PCLD0001` bytes. Coordinates are stored as f32, so
/// values beyond f32 precision are rounded on write.
pub fn encode_cloud_binary(cloud: &PointCloud3D) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(16 + n * 12);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for p in cloud.points() {
        for &c in p {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes `PCLD0001` bytes, validating magic, length, finiteness, and the
/// non-degenerate x extent before returning.
pub fn decode_cloud_binary(bytes: &[u8], source_id: &str) -> Result<PointCloud3D> {
    let mut r = ByteReader::new(bytes);
    r.magic(CLOUD_MAGIC)?;
    let count_offset = r.offset();
    let n = r.u64("point count")?;
    if n == 0 {
        return Err(Error::format(count_offset, "cloud has zero points"));
    }
    let n = check_claim(&r, n, 12, "point data")?;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let offset = r.offset();
        let x = r.f32("x coordinate")?;
        let y = r.f32("y coordinate")?;
        let z = r.f32("z coordinate")?;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::format(offset, format!("point {i} has a non-finite coordinate")));
        }
        points.push([x as f64, y as f64, z as f64]);
    }
    r.finish()?;
    PointCloud3D::new(points, source_id)
}

pub fn read_cloud_binary(path: &Path) -> Result<PointCloud3D> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud_binary(&bytes, &file_stem(path))
}

pub fn write_cloud_binary(cloud: &PointCloud3D, path: &Path) -> Result<()> {
    std::fs::write(path, encode_cloud_binary(cloud)).map_err(|e| Error::io(path, e))
}

// ── Slice-tensor caches ──────────────────────────────────────────────────

/// Encodes a slice tensor as `SLCT0001` bytes. Layout after the magic:
/// slice count u32, capacity u32, source id length u32 + UTF-8 bytes, then
/// counts, feature data, and the LSB-first packed mask.
pub fn encode_slice_cache(tensor: &SliceTensor) -> Vec<u8> {
    let id = tensor.source_id.as_bytes();
    let bits = tensor.mask.len();
    let mut out =
        Vec::with_capacity(8 + 12 + id.len() + tensor.counts.len() * 4 + tensor.data.len() * 4 + bits.div_ceil(8));
    out.extend_from_slice(SLICE_MAGIC);
    out.extend_from_slice(&(tensor.slice_count as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.max_points as u32).to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    for &c in &tensor.counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for &v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut packed = vec![0u8; bits.div_ceil(8)];
    for (i, &b) in tensor.mask.iter().enumerate() {
        if b {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    out
}

/// Decodes `SLCT0001` bytes. Beyond structural bounds this re-checks the
/// tensor invariants (counts within capacity, mask a per-slice prefix
/// matching counts, zeros under padding), so a cache that decodes is safe to
/// feed the model without further checks.
pub fn decode_slice_cache(bytes: &[u8]) -> Result<SliceTensor> {
    let mut r = ByteReader::new(bytes);
    r.magic(SLICE_MAGIC)?;
    let dims_offset = r.offset();
    let s = r.u32("slice count")? as u64;
    let m = r.u32("slice capacity")? as u64;
    if s == 0 || m == 0 {
        return Err(Error::format(dims_offset, format!("degenerate dimensions {s} x {m}")));
    }
    let id_len = r.u32("source id length")?;
    let id_len = check_claim(&r, id_len as u64, 1, "source id")?;
    let id_offset = r.offset();
    let id_bytes = r.take(id_len, "source id")?;
    let source_id = std::str::from_utf8(id_bytes)
        .map_err(|_| Error::format(id_offset, "source id is not UTF-8"))?
        .to_string();

    // Cheap overflow guard before sizing any buffer from claimed dimensions.
    let rows = s
        .checked_mul(m)
        .filter(|&r| r <= u32::MAX as u64)
        .ok_or_else(|| Error::format(dims_offset, format!("dimensions {s} x {m} overflow")))?;
    check_claim(&r, s, 4, "slice counts")?;
    let mut counts = Vec::with_capacity(s as usize);
    for i in 0..s {
        let offset = r.offset();
        let c = r.u32("slice count entry")?;
        if c as u64 > m {
            return Err(Error::format(
                offset,
                format!("slice {i} claims {c} points but capacity is {m}"),
            ));
        }
        counts.push(c);
    }
    let values = check_claim(&r, rows * 2, 4, "feature data")?;
    let data_offset = r.offset();
    let mut data = Vec::with_capacity(values);
    for _ in 0..values {
        data.push(r.f32("feature value")?);
    }
    for (i, &v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::format(
                data_offset + i as u64 * 4,
                format!("feature value {i} is non-finite"),
            ));
        }
    }
    let mask_offset = r.offset();
    let mask_bytes = r.take((rows as usize).div_ceil(8), "mask bits")?;
    let mut mask = Vec::with_capacity(rows as usize);
    for i in 0..rows as usize {
        mask.push(mask_bytes[i / 8] >> (i % 8) & 1 == 1);
    }
    // Unused tail bits of the final mask byte must be zero so that encoding
    // is canonical (exactly one byte stream per tensor).
    let used = rows as usize % 8;
    if used != 0 && mask_bytes[mask_bytes.len() - 1] >> used != 0 {
        return Err(Error::format(
            mask_offset + (mask_bytes.len() - 1) as u64,
            "nonzero padding bits in the final mask byte",
        ));
    }
    r.finish()?;

    let tensor = SliceTensor {
        slice_count: s as usize,
        max_points: m as usize,
        data,
        mask,
        counts,
        source_id,
    };
    tensor.validate().map_err(|e| Error::format(mask_offset, e.to_string()))?;
    Ok(tensor)
}

pub fn read_slice_cache(path: &Path) -> Result<SliceTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_slice_cache(&bytes)
}

pub fn write_slice_cache(tensor: &SliceTensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_slice_cache(tensor)).map_err(|e| Error::io(path, e))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "cloud".into())
}
