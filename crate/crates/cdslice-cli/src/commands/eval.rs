//! `eval`: run a checkpoint over one split of a manifest and report the
//! regression metrics, plus a per-sample prediction table for downstream
//! plots. The slicing geometry comes from the checkpoint itself, so a model
//! always sees inputs shaped the way it was trained.

use std::path::Path;

use cdslice::dataio::{load_manifest, Split};
use cdslice::error::{Error, Result};
use cdslice::metrics::Metrics;
use cdslice::model::checkpoint::load_checkpoint;
use cdslice::training::evaluate;

use crate::config::{self, MaxPoints, Precision, RunConfig};

pub fn run(
    checkpoint: &Path,
    manifest_path: &Path,
    split: Split,
    out_dir: &Path,
    mut run: RunConfig,
    json: bool,
) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    run.adopt_model_dims(params.config());

    let manifest = load_manifest(manifest_path)?;
    let rows: Vec<_> = manifest.split_rows(split).collect();
    if rows.is_empty() {
        return Err(Error::InvalidParameter {
            name: "split",
            message: format!("manifest has no {} rows", split.as_str()),
        });
    }
    let samples = super::load_samples(&manifest, &rows, &run, None)?;
    let pairs: Vec<_> = samples.iter().map(super::Sample::pair).collect();

    let (metrics, predictions): (Metrics, Vec<f64>) = match run.precision {
        Precision::F32 => evaluate(&params, &pairs)?,
        Precision::F64 => evaluate(&params.convert::<f64>(), &pairs)?,
    };

    super::ensure_dir(out_dir)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let truths: Vec<f64> = samples.iter().map(|s| s.cd).collect();
    let csv_path = out_dir.join(format!("eval_{}.csv", split.as_str()));
    super::write_prediction_csv(&csv_path, &ids, &truths, &predictions)?;

    let metrics_json = serde_json::to_string(&metrics).expect("metrics serialize");
    super::write_text(&out_dir.join("metrics.json"), &format!("{metrics_json}\n"))?;
    run.max_points = MaxPoints::Fixed(params.config().max_points);
    config::archive(
        out_dir,
        "eval",
        &run,
        &[
            ("checkpoint", checkpoint.display().to_string()),
            ("manifest", manifest_path.display().to_string()),
            ("split", split.as_str().to_string()),
            ("out", out_dir.display().to_string()),
        ],
    )?;

    if json {
        println!("{metrics_json}");
    } else {
        println!("split: {} (n={})", split.as_str(), metrics.n);
        println!("mse: {:.6e}", metrics.mse);
        println!("mae: {:.6e}", metrics.mae);
        println!("max_ae: {:.6e}", metrics.max_ae);
        match metrics.r_squared {
            Some(r2) => println!("r_squared: {r2:.6}"),
            None => println!("r_squared: undefined (zero-variance truths)"),
        }
        println!("wrote {}", csv_path.display());
    }
    Ok(())
}
