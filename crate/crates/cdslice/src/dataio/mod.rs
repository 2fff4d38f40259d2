//! Dataset manifests, split bookkeeping, and a parametric synthetic-body
//! generator with an analytic drag-proxy label.
//!
//! Real datasets are reached exclusively through the manifest abstraction: a
//! CSV of `(id, path, cd, split)` rows pointing at point-cloud files. Nothing
//! here downloads or converts meshes. The synthetic generator exists so the
//! whole pipeline can be exercised at desk scale with labels whose exact
//! value is known in closed form.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::formats::{read_cloud_binary, write_cloud_binary};
use crate::geometry::{scan_max_points, PointCloud3D};

#[cfg(test)]
mod tests;

// ── Manifests ────────────────────────────────────────────────────────────

/// Which partition a sample belongs to. Splits are disjoint by construction:
/// a row carries exactly one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Inverse of [`Split::as_str`]; `None` for unknown tokens.
    pub fn parse(token: &str) -> Option<Split> {
        match token {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest line: a sample id, the cloud file it names, its drag label,
/// and the split it was assigned to. `path` is kept exactly as written;
/// relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub path: String,
    pub cd: f64,
    pub split: Split,
}

/// A validated dataset listing. Row ids are unique; labels are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
    base_dir: PathBuf,
}

impl Manifest {
    /// Builds a manifest from rows, enforcing the invariants a parsed file
    /// gets: non-empty unique ids, non-empty paths, finite labels.
    pub fn from_rows(rows: Vec<ManifestRow>, base_dir: PathBuf) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            let line = i + 2; // header is line 1
            if row.id.is_empty() {
                return Err(Error::Parse { line, message: "empty sample id".into() });
            }
            if row.path.is_empty() {
                return Err(Error::Parse { line, message: "empty cloud path".into() });
            }
            if !row.cd.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite cd label {}", row.cd),
                });
            }
            if !seen.insert(row.id.as_str()) {
                return Err(Error::DuplicateId { id: row.id.clone() });
            }
        }
        Ok(Manifest { rows, base_dir })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    /// Directory that relative row paths resolve against.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Absolute-or-joined location of a row's cloud file.
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

const MANIFEST_HEADER: [&str; 4] = ["id", "path", "cd", "split"];

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Parses manifest CSV text. Pure: no filesystem access, so referenced cloud
/// files are not checked here (see [`load_manifest`] for the checked form).
/// `base_dir` seeds relative-path resolution on the returned manifest.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if headers.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                MANIFEST_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record_line(&record);
        if record.len() != MANIFEST_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        let path = record[1].to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty sample id".into() });
        }
        if path.is_empty() {
            return Err(Error::Parse { line, message: "empty cloud path".into() });
        }
        let cd: f64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("cd value `{}` is not a number", &record[2]),
        })?;
        if !cd.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("cd value `{}` is not finite", &record[2]),
            });
        }
        let split = Split::parse(&record[3]).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown split token `{}` (want train|val|test)", &record[3]),
        })?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id });
        }
        rows.push(ManifestRow { id, path, cd, split });
    }
    Ok(Manifest { rows, base_dir: base_dir.to_path_buf() })
}

/// Reads and validates a manifest file. Beyond parsing, every referenced
/// cloud path must exist on disk, so downstream stages can assume rows are
/// loadable.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    for row in manifest.rows() {
        let cloud = manifest.resolve(row);
        fs::metadata(&cloud).map_err(|e| Error::io(&cloud, e))?;
    }
    Ok(manifest)
}

/// Writes rows back out in the canonical column order. Labels print in the
/// shortest form that re-parses to the identical f64, so a write-then-load
/// round trip is value-identical.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    for row in manifest.rows() {
        w.write_record([
            row.id.as_str(),
            row.path.as_str(),
            &row.cd.to_string(),
            row.split.as_str(),
        ])
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ── Synthetic bodies ─────────────────────────────────────────────────────

/// Parameters of one procedurally generated car-like body.
///
/// The body spans `x` in `[0, length)`. At station `u = x / length` the
/// cross-section is the superellipse `|y/a(u)|^m + |z/b(u)|^m = 1` with
/// `a(u) = half_width * profile(u)` and `b(u) = half_height * profile(u)`.
/// The profile ramps up over the nose as a quarter sine wave, holds 1.0 over
/// the midbody, and tapers over the tail as `(1-s)^p` where `s` runs 0 to 1
/// across the tail fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBodySpec {
    /// Overall body length; the x extent before any normalization.
    pub length: f64,
    /// Fraction of the length occupied by the nose ramp, in (0, 1).
    pub nose_fraction: f64,
    /// Fraction of the length occupied by the rear taper, in (0, 1).
    pub tail_fraction: f64,
    /// Peak cross-section half-extent along y.
    pub half_width: f64,
    /// Peak cross-section half-extent along z.
    pub half_height: f64,
    /// Tail exponent p: larger p pulls the taper in faster near the tail tip,
    /// i.e. a blunter truncation. Must exceed 0.25 for the label's
    /// mean-squared area slope to be finite.
    pub taper_exponent: f64,
    /// Superellipse exponent m: 2 gives ellipses, larger values square the
    /// section off, values below 2 pinch it.
    pub section_exponent: f64,
    /// Number of surface points to sample.
    pub points: usize,
    /// RNG seed; generation is a pure function of (spec, seed).
    pub seed: u64,
}

impl SyntheticBodySpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("length", self.length),
            ("nose_fraction", self.nose_fraction),
            ("tail_fraction", self.tail_fraction),
            ("half_width", self.half_width),
            ("half_height", self.half_height),
            ("taper_exponent", self.taper_exponent),
            ("section_exponent", self.section_exponent),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("must be finite, got {v}"),
                });
            }
        }
        for (name, v) in [
            ("length", self.length),
            ("half_width", self.half_width),
            ("half_height", self.half_height),
            ("section_exponent", self.section_exponent),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        for (name, v) in [
            ("nose_fraction", self.nose_fraction),
            ("tail_fraction", self.tail_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("must lie in (0, 1), got {v}"),
                });
            }
        }
        if self.nose_fraction + self.tail_fraction >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "nose_fraction",
                message: format!(
                    "nose + tail fractions must leave a midbody, got {} + {}",
                    self.nose_fraction, self.tail_fraction
                ),
            });
        }
        // The label averages (dA/du)^2 over the tail, which integrates
        // (1-s)^(4p-2); that integral diverges at or below p = 1/4.
        if self.taper_exponent <= 0.25 {
            return Err(Error::InvalidParameter {
                name: "taper_exponent",
                message: format!("must exceed 0.25, got {}", self.taper_exponent),
            });
        }
        if self.points < 2 {
            return Err(Error::InvalidParameter {
                name: "points",
                message: format!("need at least 2 surface points, got {}", self.points),
            });
        }
        Ok(())
    }

    /// Cross-section scale at station `u` in [0, 1): quarter-sine nose ramp,
    /// unit midbody, `(1-s)^p` tail taper. Continuous with a continuous
    /// derivative at the nose/midbody joint.
    pub fn profile(&self, u: f64) -> f64 {
        if u < self.nose_fraction {
            (FRAC_PI_2 * u / self.nose_fraction).sin()
        } else if u <= 1.0 - self.tail_fraction {
            1.0
        } else {
            let s = (u - (1.0 - self.tail_fraction)) / self.tail_fraction;
            (1.0 - s).powf(self.taper_exponent)
        }
    }
}

/// Area of the superellipse `|y/a|^m + |z/b|^m = 1` divided by `a*b`. For
/// m = 2 this is pi; sections square off toward 4 as m grows.
pub fn superellipse_area_factor(m: f64) -> f64 {
    4.0 * gamma(1.0 + 1.0 / m).powi(2) / gamma(1.0 + 2.0 / m)
}

/// Analytic drag-proxy label: a frontal-area term plus the mean over the
/// tail of the squared area slope (dA/du)^2, with fixed constants
/// c0 = 0.20, c1 = 0.50, c2 = 0.15.
///
/// On the tail, A(u) = F * a0 * b0 * (1-s)^(2p) with F the superellipse area
/// factor and ds/du = 1/tail_fraction, so
/// (dA/du)^2 = (2 * F * a0 * b0 * p / tail_fraction)^2 * (1-s)^(4p-2),
/// whose mean over s in [0, 1] closes to division by (4p - 1).
pub fn cd_proxy(spec: &SyntheticBodySpec) -> f64 {
    let frontal = spec.half_width * spec.half_height / (spec.length * spec.length);
    let peak_area =
        superellipse_area_factor(spec.section_exponent) * spec.half_width * spec.half_height;
    let p = spec.taper_exponent;
    let slope = 2.0 * peak_area * p / spec.tail_fraction;
    let taper = slope * slope / (4.0 * p - 1.0);
    0.20 + 0.50 * frontal + 0.15 * taper
}

/// Samples `spec.points` surface points of the body and returns them with
/// the analytic label. Deterministic: one stratified station and one angle
/// are drawn per point, in index order, from a stream seeded by `spec.seed`.
pub fn generate_synthetic_body(spec: &SyntheticBodySpec) -> Result<(PointCloud3D, f64)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.points;
    let inv_m = 2.0 / spec.section_exponent;
    let mut points = Vec::with_capacity(n);
    for j in 0..n {
        // Stratified station: exactly one sample falls in [j/n, (j+1)/n).
        let jitter: f64 = rng.gen();
        let u = (j as f64 + jitter) / n as f64;
        let theta = rng.gen_range(0.0..TAU);
        let scale = spec.profile(u);
        let (sin_t, cos_t) = theta.sin_cos();
        let y = spec.half_width * scale * cos_t.signum() * cos_t.abs().powf(inv_m);
        let z = spec.half_height * scale * sin_t.signum() * sin_t.abs().powf(inv_m);
        points.push([u * spec.length, y, z]);
    }
    let cloud = PointCloud3D::new(points, format!("body-seed-{}", spec.seed))?;
    Ok((cloud, cd_proxy(spec)))
}

// ── Dataset construction ─────────────────────────────────────────────────

/// Closed ranges the dataset builder samples body parameters from, plus the
/// fixed per-body point count. A degenerate range `[v, v]` pins a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRanges {
    pub length: [f64; 2],
    pub nose_fraction: [f64; 2],
    pub tail_fraction: [f64; 2],
    pub half_width: [f64; 2],
    pub half_height: [f64; 2],
    pub taper_exponent: [f64; 2],
    pub section_exponent: [f64; 2],
    pub points: usize,
}

impl Default for SpecRanges {
    /// Car-ish proportions. The length is pinned rather than ranged: the
    /// model consumes per-car normalized clouds, which erase absolute scale,
    /// while the label's taper term grows with absolute area. A fixed length
    /// keeps the label a pure function of what the normalized cloud shows;
    /// widen the range only if your downstream skips normalization.
    fn default() -> Self {
        SpecRanges {
            length: [4.2, 4.2],
            nose_fraction: [0.15, 0.30],
            tail_fraction: [0.25, 0.40],
            half_width: [0.25, 0.40],
            half_height: [0.22, 0.35],
            taper_exponent: [0.6, 1.4],
            section_exponent: [1.6, 3.0],
            points: 2048,
        }
    }
}

impl SpecRanges {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("length", self.length),
            ("nose_fraction", self.nose_fraction),
            ("tail_fraction", self.tail_fraction),
            ("half_width", self.half_width),
            ("half_height", self.half_height),
            ("taper_exponent", self.taper_exponent),
            ("section_exponent", self.section_exponent),
        ];
        for (name, [lo, hi]) in pairs {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("range [{lo}, {hi}] is not an ordered finite pair"),
                });
            }
        }
        // Any sample drawn from the ranges must itself be a valid spec; the
        // extremes are the binding cases.
        let worst = SyntheticBodySpec {
            length: self.length[0],
            nose_fraction: self.nose_fraction[1],
            tail_fraction: self.tail_fraction[1],
            half_width: self.half_width[0],
            half_height: self.half_height[0],
            taper_exponent: self.taper_exponent[0],
            section_exponent: self.section_exponent[0],
            points: self.points,
            seed: 0,
        };
        worst.validate()
    }

    /// Draws one spec, uniform per parameter, in field order, then a body
    /// seed. The draw order is part of the builder's determinism contract.
    fn sample(&self, rng: &mut ChaCha8Rng) -> SyntheticBodySpec {
        let mut draw = |r: [f64; 2]| rng.gen_range(r[0]..=r[1]);
        SyntheticBodySpec {
            length: draw(self.length),
            nose_fraction: draw(self.nose_fraction),
            tail_fraction: draw(self.tail_fraction),
            half_width: draw(self.half_width),
            half_height: draw(self.half_height),
            taper_exponent: draw(self.taper_exponent),
            section_exponent: draw(self.section_exponent),
            points: self.points,
            seed: rng.gen(),
        }
    }
}

/// Generates `n_bodies` synthetic bodies under `out_dir` and returns the
/// manifest written alongside them as `manifest.csv`.
///
/// Each body `i` becomes `body_NNNN.pcld` plus a `body_NNNN.json` sidecar
/// holding its spec for provenance. Split sizes follow a floor rule: 15% to
/// val and 15% to test (rounded down), remainder to train; assignment is a
/// seeded shuffle. Bodies are generated and written in parallel; the
/// manifest is written once at the end.
pub fn build_synthetic_dataset(
    n_bodies: usize,
    ranges: &SpecRanges,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if n_bodies < 3 {
        return Err(Error::InvalidParameter {
            name: "n_bodies",
            message: format!("need at least 3 bodies, got {n_bodies}"),
        });
    }
    ranges.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<SyntheticBodySpec> = (0..n_bodies).map(|_| ranges.sample(&mut rng)).collect();

    let n_val = n_bodies * 15 / 100;
    let n_test = n_bodies * 15 / 100;
    let mut order: Vec<usize> = (0..n_bodies).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Train; n_bodies];
    for &i in &order[..n_val] {
        splits[i] = Split::Val;
    }
    for &i in &order[n_val..n_val + n_test] {
        splits[i] = Split::Test;
    }

    let rows: Vec<ManifestRow> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<ManifestRow> {
            let id = format!("body_{i:04}");
            let (cloud, cd) = generate_synthetic_body(spec)?;
            let file = format!("{id}.pcld");
            write_cloud_binary(&cloud, &out_dir.join(&file))?;
            let sidecar = out_dir.join(format!("{id}.json"));
            let json = serde_json::to_vec_pretty(spec).expect("spec serializes");
            fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
            Ok(ManifestRow { id, path: file, cd, split: splits[i] })
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest::from_rows(rows, out_dir.to_path_buf())?;
    write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

// ── Dataset statistics ───────────────────────────────────────────────────

/// Label and size summary for one split. The cd fields are `None` when the
/// split is empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub count: usize,
    pub cd_min: Option<f64>,
    pub cd_mean: Option<f64>,
    pub cd_max: Option<f64>,
}

fn summarize(cds: impl Iterator<Item = f64>) -> SplitSummary {
    let mut count = 0usize;
    let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for cd in cds {
        count += 1;
        min = min.min(cd);
        max = max.max(cd);
        sum += cd;
    }
    if count == 0 {
        SplitSummary { count: 0, cd_min: None, cd_mean: None, cd_max: None }
    } else {
        SplitSummary {
            count,
            cd_min: Some(min),
            cd_mean: Some(sum / count as f64),
            cd_max: Some(max),
        }
    }
}

/// Per-split label summaries plus the tightest per-slice capacity that fits
/// every cloud in the manifest at the given slice count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub slice_count: usize,
    /// Largest bin occupancy across all clouds: the smallest `max_points`
    /// that slices the whole dataset without overflow.
    pub max_points_per_slice: usize,
    pub train: SplitSummary,
    pub val: SplitSummary,
    pub test: SplitSummary,
}

/// Loads every cloud (in parallel) and summarizes the manifest. Empty splits
/// report count 0; an entirely empty manifest is an error because the
/// occupancy scan would be meaningless.
pub fn dataset_stats(manifest: &Manifest, slice_count: usize) -> Result<DatasetStats> {
    if manifest.rows().is_empty() {
        return Err(Error::EmptyInput("manifest"));
    }
    let clouds: Vec<PointCloud3D> = manifest
        .rows()
        .par_iter()
        .map(|row| read_cloud_binary(&manifest.resolve(row)))
        .collect::<Result<_>>()?;
    let max_points_per_slice = scan_max_points(&clouds, slice_count)?;
    let of = |split: Split| summarize(manifest.split_rows(split).map(|r| r.cd));
    Ok(DatasetStats {
        slice_count,
        max_points_per_slice,
        train: of(Split::Train),
        val: of(Split::Val),
        test: of(Split::Test),
    })
}
