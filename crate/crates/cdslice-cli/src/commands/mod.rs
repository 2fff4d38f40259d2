//! Subcommand implementations and the filesystem plumbing they share.
//!
//! Conventions across every command: inputs are never modified, all output
//! lands under the command's own output directory, the fully resolved
//! configuration is archived next to the outputs, stdout carries the result
//! (line-oriented by default, a single JSON document with `--json`), and
//! diagnostics go to stderr.

pub mod eval;
pub mod gradcheck;
pub mod predict;
pub mod preprocess;
pub mod report;
pub mod scan;
pub mod sensitivity;
pub mod synth;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use cdslice::dataio::{Manifest, ManifestRow};
use cdslice::error::{Error, Result};
use cdslice::geometry::formats::{read_cloud_binary, read_cloud_text, read_slice_cache};
use cdslice::geometry::{
    normalize_cloud, scan_max_points, slice_point_cloud, PointCloud3D, SliceConfig, SliceTensor,
};
use crate::config::{MaxPoints, RunConfig};

/// One labeled, sliced sample ready for the model.
pub struct Sample {
    pub id: String,
    pub tensor: SliceTensor,
    pub cd: f64,
}

impl Sample {
    pub fn pair(&self) -> (SliceTensor, f64) {
        (self.tensor.clone(), self.cd)
    }
}

/// Reads a cloud file, picking the decoder by extension: `.pcld` is the
/// binary format, everything else is whitespace-separated text.
pub fn load_cloud(path: &Path) -> Result<PointCloud3D> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pcld") => read_cloud_binary(path),
        _ => read_cloud_text(path),
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// The slice-tensor cache location for reading: the environment variable
/// wins, then the command's flag, then the config file.
pub fn cache_dir_for_reading(flag: Option<&Path>, run: &RunConfig) -> Option<PathBuf> {
    match std::env::var_os("CDSLICE_CACHE_DIR") {
        Some(dir) if !dir.is_empty() => Some(PathBuf::from(dir)),
        _ => flag.map(Path::to_path_buf).or_else(|| run.cache_dir.clone()),
    }
}

/// Cache file naming: one slice-tensor file per manifest id.
pub fn cache_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.slct"))
}

/// Loads every cloud a row set references, in row order.
pub fn load_clouds(manifest: &Manifest, rows: &[&ManifestRow]) -> Result<Vec<PointCloud3D>> {
    rows.iter().map(|row| load_cloud(&manifest.resolve(row))).collect()
}

/// Resolves an `auto` point capacity against actual data: the largest bin
/// occupancy across the given clouds, measured after the configured
/// normalization (the same geometry the slicer will see). No-op when the
/// capacity is already fixed.
pub fn resolve_capacity_from_clouds(run: &mut RunConfig, clouds: &[PointCloud3D]) -> Result<usize> {
    if let Some(m) = run.max_points.fixed() {
        return Ok(m);
    }
    let normalized: Vec<PointCloud3D> =
        clouds.iter().map(|c| normalize_cloud(c, run.normalization)).collect();
    let m = scan_max_points(&normalized, run.slice_count)?;
    run.max_points = MaxPoints::Fixed(m);
    Ok(m)
}

/// Loads one row's tensor from the cache, insisting the cached geometry
/// matches the expected slicing exactly.
fn load_cached_tensor(dir: &Path, row: &ManifestRow, expect: &SliceConfig) -> Result<SliceTensor> {
    let tensor = read_slice_cache(&cache_file(dir, &row.id))?;
    if tensor.slice_count != expect.slice_count || tensor.max_points != expect.max_points {
        return Err(Error::ConfigMismatch {
            expected: format!(
                "cached tensor {} x {} (run configuration)",
                expect.slice_count, expect.max_points
            ),
            found: format!(
                "cached tensor {} x {} for id {:?}",
                tensor.slice_count, tensor.max_points, row.id
            ),
        });
    }
    Ok(tensor)
}

/// Adopts the point capacity recorded in an existing cache when the run
/// still says `auto`: the first row's cache file declares it.
pub fn resolve_capacity_from_cache(
    run: &mut RunConfig,
    dir: &Path,
    rows: &[&ManifestRow],
) -> Result<usize> {
    if let Some(m) = run.max_points.fixed() {
        return Ok(m);
    }
    let first = rows.first().ok_or(Error::EmptyInput("manifest rows"))?;
    let tensor = read_slice_cache(&cache_file(dir, &first.id))?;
    run.max_points = MaxPoints::Fixed(tensor.max_points);
    Ok(tensor.max_points)
}

/// Materializes labeled tensors for a row set, either from a cache
/// directory or by slicing the referenced clouds. The run's point capacity
/// must already be concrete.
pub fn load_samples(
    manifest: &Manifest,
    rows: &[&ManifestRow],
    run: &RunConfig,
    cache: Option<&Path>,
) -> Result<Vec<Sample>> {
    let cfg = run.slice_config();
    rows.iter()
        .map(|row| {
            let tensor = match cache {
                Some(dir) => load_cached_tensor(dir, row, &cfg)?,
                None => slice_point_cloud(&load_cloud(&manifest.resolve(row))?, &cfg)?,
            };
            Ok(Sample { id: row.id.clone(), tensor, cd: row.cd })
        })
        .collect()
}

/// Writes a per-sample prediction table: id, truth, predicted, residual
/// (predicted minus truth).
pub fn write_prediction_csv(
    path: &Path,
    ids: &[String],
    truths: &[f64],
    predictions: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Parse { line: 0, message: format!("{}: {e}", path.display()) })?;
    w.write_record(["id", "truth", "predicted", "residual"])
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    for ((id, t), p) in ids.iter().zip(truths).zip(predictions) {
        w.write_record([
            id.as_str(),
            &t.to_string(),
            &p.to_string(),
            &(p - t).to_string(),
        ])
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a per-sample prediction table back: (truth, predicted, residual)
/// per row, in file order.
pub fn read_prediction_csv(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse { line: 0, message: format!("{}: {e}", path.display()) })?;
    let headers = r.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    let expected = ["id", "truth", "predicted", "residual"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header id,truth,predicted,residual, got {headers:?}"),
        });
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or(Error::Parse { line, message: "missing field".into() })?
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, message: e.to_string() })
        };
        rows.push((field(1)?, field(2)?, field(3)?));
    }
    Ok(rows)
}

/// Writes a string file, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
