//! Point clouds and cross-section slicing.
//!
//! A cloud is cut into `S` equal-width bins along x using the cloud's own
//! x extent: `w = (x_max - x_min) / S`, point `p` lands in bin
//! `floor((p.x - x_min) / w)`, and `p.x == x_max` clamps into the last bin.
//! Each bin keeps the (y, z) projections of its points, zero-padded to a
//! fixed per-slice capacity with a mask marking real rows. Binning is
//! relative to the per-car extent, so translating a cloud along x yields the
//! same tensor.

pub mod formats;

use crate::error::{Error, Result};

/// One vehicle's surface samples. Invariants, enforced on construction: at
/// least one point, all coordinates finite, and a non-degenerate x extent
/// (slicing needs a positive bin width).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud3D {
    points: Vec<[f64; 3]>,
    source_id: String,
}

impl PointCloud3D {
    pub fn new(points: Vec<[f64; 3]>, source_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud"));
        }
        let source_id = source_id.into();
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("point {i} of cloud {source_id:?}"),
                });
            }
        }
        let (x_min, x_max) = x_extent(&points);
        if !(x_max > x_min) {
            return Err(Error::DegenerateRange { x_min, x_max });
        }
        Ok(PointCloud3D { points, source_id })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty clouds
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn x_range(&self) -> (f64, f64) {
        x_extent(&self.points)
    }
}

fn x_extent(points: &[[f64; 3]]) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for p in points {
        min = min.min(p[0]);
        max = max.max(p[0]);
    }
    (min, max)
}

/// What to do when a bin receives more points than the slice capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Fail with the offending bin and its count.
    Strict,
    /// Keep every k-th point (k chosen so the kept count fits) and log a
    /// warning. Deterministic: selection depends only on input order.
    Subsample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Keep raw coordinates (the default; bin geometry is already relative).
    None,
    /// Center each axis at the middle of its extent, then scale all axes
    /// uniformly so x spans [-1, 1]. Aspect ratios survive.
    PerCarCenterScale,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SliceConfig {
    /// Number of cross-section bins along x.
    pub slice_count: usize,
    /// Per-slice point capacity; rows beyond a bin's count are zero padding.
    pub max_points: usize,
    pub overflow: OverflowPolicy,
    pub normalization: Normalization,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            slice_count: 80,
            max_points: 6500,
            overflow: OverflowPolicy::Strict,
            normalization: Normalization::None,
        }
    }
}

/// Slice-binned (y, z) features: `data[s][m][c]` row-major with a parallel
/// mask. Within a row all real points precede all padding, `counts[i]` is the
/// number of real points in slice `i`, and padded entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTensor {
    pub slice_count: usize,
    pub max_points: usize,
    /// `slice_count * max_points * 2` values, feature order (y, z).
    pub data: Vec<f32>,
    /// `slice_count * max_points` bits; `true` marks a real point.
    pub mask: Vec<bool>,
    /// Real points per slice.
    pub counts: Vec<u32>,
    pub source_id: String,
}

impl SliceTensor {
    /// Checks the structural invariants documented on the type.
    pub fn validate(&self) -> Result<()> {
        let (s, m) = (self.slice_count, self.max_points);
        if self.data.len() != s * m * 2 {
            return Err(Error::ShapeMismatch {
                op: "slice tensor data",
                left: vec![self.data.len()],
                right: vec![s, m, 2],
            });
        }
        if self.mask.len() != s * m {
            return Err(Error::MaskLength { expected: s * m, got: self.mask.len() });
        }
        if self.counts.len() != s {
            return Err(Error::ShapeMismatch {
                op: "slice tensor counts",
                left: vec![self.counts.len()],
                right: vec![s],
            });
        }
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as usize;
            if c > m {
                return Err(Error::BinCapacity { bin: i, count: c, capacity: m });
            }
            let row = &self.mask[i * m..(i + 1) * m];
            if row.iter().take(c).any(|&b| !b) || row.iter().skip(c).any(|&b| b) {
                return Err(Error::InvalidParameter {
                    name: "mask",
                    message: format!("slice {i}: mask does not match count {c} as a prefix"),
                });
            }
            for (j, &b) in row.iter().enumerate() {
                if !b {
                    let off = (i * m + j) * 2;
                    if self.data[off] != 0.0 || self.data[off + 1] != 0.0 {
                        return Err(Error::InvalidParameter {
                            name: "data",
                            message: format!("slice {i} row {j}: nonzero features under zero mask"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Mask row for one slice.
    pub fn mask_row(&self, slice: usize) -> &[bool] {
        &self.mask[slice * self.max_points..(slice + 1) * self.max_points]
    }

    /// Feature rows for one slice (`max_points * 2` values).
    pub fn slice_data(&self, slice: usize) -> &[f32] {
        let stride = self.max_points * 2;
        &self.data[slice * stride..(slice + 1) * stride]
    }

    pub fn total_points(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Applies a normalization mode, returning a new cloud.
pub fn normalize_cloud(cloud: &PointCloud3D, mode: Normalization) -> PointCloud3D {
    match mode {
        Normalization::None => cloud.clone(),
        Normalization::PerCarCenterScale => {
            let pts = cloud.points();
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for p in pts {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
            let scale = 2.0 / (hi[0] - lo[0]);
            let points = pts
                .iter()
                .map(|p| {
                    [
                        (p[0] - center[0]) * scale,
                        (p[1] - center[1]) * scale,
                        (p[2] - center[2]) * scale,
                    ]
                })
                .collect();
            PointCloud3D { points, source_id: cloud.source_id.clone() }
        }
    }
}

/// Bin index along x for one point, given the cloud extent and bin width.
fn bin_of(x: f64, x_min: f64, w: f64, slice_count: usize) -> usize {
    let i = ((x - x_min) / w).floor() as usize;
    i.min(slice_count - 1)
}

/// Cuts a cloud into the slice-tensor layout described on [`SliceTensor`].
pub fn slice_point_cloud(cloud: &PointCloud3D, config: &SliceConfig) -> Result<SliceTensor> {
    if config.slice_count == 0 {
        return Err(Error::InvalidParameter {
            name: "slice_count",
            message: "must be at least 1".into(),
        });
    }
    if config.max_points == 0 {
        return Err(Error::InvalidParameter {
            name: "max_points",
            message: "must be at least 1".into(),
        });
    }
    let cloud = normalize_cloud(cloud, config.normalization);
    let (x_min, x_max) = cloud.x_range();
    if !(x_max > x_min) {
        return Err(Error::DegenerateRange { x_min, x_max });
    }
    let s = config.slice_count;
    let m = config.max_points;
    let w = (x_max - x_min) / s as f64;

    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); s];
    for (idx, p) in cloud.points().iter().enumerate() {
        bins[bin_of(p[0], x_min, w, s)].push(idx);
    }

    let mut data = vec![0.0f32; s * m * 2];
    let mut mask = vec![false; s * m];
    let mut counts = vec![0u32; s];
    for (i, bin) in bins.iter().enumerate() {
        let kept: Vec<usize> = if bin.len() <= m {
            bin.clone()
        } else {
            match config.overflow {
                OverflowPolicy::Strict => {
                    return Err(Error::BinCapacity { bin: i, count: bin.len(), capacity: m })
                }
                OverflowPolicy::Subsample => {
                    let k = bin.len().div_ceil(m);
                    let kept: Vec<usize> = bin.iter().step_by(k).copied().collect();
                    log::warn!(
                        "cloud {:?}: slice {i} holds {} points, keeping every {k}-th ({} kept)",
                        cloud.source_id(),
                        bin.len(),
                        kept.len()
                    );
                    kept
                }
            }
        };
        counts[i] = kept.len() as u32;
        for (row, &pi) in kept.iter().enumerate() {
            let p = cloud.points()[pi];
            let off = (i * m + row) * 2;
            data[off] = p[1] as f32;
            data[off + 1] = p[2] as f32;
            mask[i * m + row] = true;
        }
    }

    Ok(SliceTensor {
        slice_count: s,
        max_points: m,
        data,
        mask,
        counts,
        source_id: cloud.source_id().to_string(),
    })
}

/// Largest bin occupancy over a set of clouds at a given slice count: the
/// smallest capacity that makes every cloud sliceable without overflow.
/// Order-free (it is a max), so any iteration order gives the same answer.
pub fn scan_max_points<'a>(
    clouds: impl IntoIterator<Item = &'a PointCloud3D>,
    slice_count: usize,
) -> Result<usize> {
    if slice_count == 0 {
        return Err(Error::InvalidParameter {
            name: "slice_count",
            message: "must be at least 1".into(),
        });
    }
    let mut any = false;
    let mut max = 0usize;
    for cloud in clouds {
        any = true;
        let (x_min, x_max) = cloud.x_range();
        if !(x_max > x_min) {
            return Err(Error::DegenerateRange { x_min, x_max });
        }
        let w = (x_max - x_min) / slice_count as f64;
        let mut counts = vec![0usize; slice_count];
        for p in cloud.points() {
            counts[bin_of(p[0], x_min, w, slice_count)] += 1;
        }
        max = max.max(counts.iter().copied().max().unwrap_or(0));
    }
    if !any {
        return Err(Error::EmptyInput("scan_max_points clouds"));
    }
    Ok(max)
}

/// The real (y, z) points of one slice, in stored row order. Together with
/// the bin assignment this recovers the multiset of projected points, which
/// is what round-trip tests compare.
pub fn reconstruct_points(tensor: &SliceTensor, slice: usize) -> Result<Vec<(f32, f32)>> {
    if slice >= tensor.slice_count {
        return Err(Error::InvalidParameter {
            name: "slice",
            message: format!("index {slice} out of range for {} slices", tensor.slice_count),
        });
    }
    let count = tensor.counts[slice] as usize;
    let row = tensor.slice_data(slice);
    Ok((0..count).map(|j| (row[j * 2], row[j * 2 + 1])).collect())
}
