//! Regression quality measures over paired truth / prediction vectors.
//!
//! Residuals are always `predicted - truth`. The coefficient of
//! determination compares squared residuals against variance around the
//! truth mean and is undefined when every truth is identical, which the
//! type reflects with an `Option` rather than a sentinel.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    /// Mean squared residual.
    pub mse: f64,
    /// Mean absolute residual.
    pub mae: f64,
    /// 1 - SS_res / SS_tot; `None` when the truths have zero variance.
    pub r_squared: Option<f64>,
    /// Largest absolute residual.
    pub max_ae: f64,
    /// Number of pairs scored.
    pub n: usize,
}

/// Per-pair residuals, `predicted - truth`.
pub fn residuals(truths: &[f64], predictions: &[f64]) -> Result<Vec<f64>> {
    if truths.len() != predictions.len() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            left: vec![truths.len()],
            right: vec![predictions.len()],
        });
    }
    if truths.is_empty() {
        return Err(Error::EmptyInput("metrics pairs"));
    }
    for (i, (&t, &p)) in truths.iter().zip(predictions).enumerate() {
        if !t.is_finite() || !p.is_finite() {
            return Err(Error::NonFinite { context: format!("metrics pair {i}") });
        }
    }
    Ok(truths.iter().zip(predictions).map(|(&t, &p)| p - t).collect())
}

pub fn compute_metrics(truths: &[f64], predictions: &[f64]) -> Result<Metrics> {
    let res = residuals(truths, predictions)?;
    let n = res.len();
    let nf = n as f64;
    let mse = res.iter().map(|r| r * r).sum::<f64>() / nf;
    let mae = res.iter().map(|r| r.abs()).sum::<f64>() / nf;
    let max_ae = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let mean = truths.iter().sum::<f64>() / nf;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r_squared = if ss_tot > 0.0 { Some(1.0 - mse * nf / ss_tot) } else { None };
    Ok(Metrics { mse, mae, r_squared, max_ae, n })
}

/// Buckets residuals into fixed-width bins anchored at zero (bin `k` covers
/// `[k * width, (k + 1) * width)`). Returns `(bin_start, count)` pairs in
/// ascending order, empty bins omitted.
pub fn residual_histogram(residuals: &[f64], bin_width: f64) -> Result<Vec<(f64, usize)>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidParameter {
            name: "bin_width",
            message: format!("must be positive and finite, got {bin_width}"),
        });
    }
    let mut bins: std::collections::BTreeMap<i64, usize> = std::collections::BTreeMap::new();
    for &r in residuals {
        let k = (r / bin_width).floor() as i64;
        *bins.entry(k).or_insert(0) += 1;
    }
    Ok(bins.into_iter().map(|(k, c)| (k as f64 * bin_width, c)).collect())
}
