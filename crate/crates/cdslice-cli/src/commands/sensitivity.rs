//! `sensitivity`: leave-one-slice-out attribution for a single cloud. Each
//! slice is emptied in turn and the prediction shift is recorded — a
//! positive delta means the slice's points were holding the predicted drag
//! down. Output: a CSV with exactly one row per slice (already-empty slices
//! report exactly zero) and a bar chart.

use std::path::Path;

use cdslice::error::{Error, Result};
use cdslice::geometry::slice_point_cloud;
use cdslice::model::checkpoint::load_checkpoint;
use cdslice::model::forward::slice_sensitivity;

use crate::config::{self, MaxPoints, Precision, RunConfig};
use crate::svg;

pub fn run(
    checkpoint: &Path,
    cloud_path: &Path,
    out_dir: &Path,
    mut run: RunConfig,
    json: bool,
) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    run.adopt_model_dims(params.config());
    run.max_points = MaxPoints::Fixed(params.config().max_points);

    let cloud = super::load_cloud(cloud_path)?;
    let tensor = slice_point_cloud(&cloud, &run.slice_config())?;
    let deltas = match run.precision {
        Precision::F32 => slice_sensitivity(&params, &tensor)?,
        Precision::F64 => slice_sensitivity(&params.convert::<f64>(), &tensor)?,
    };

    super::ensure_dir(out_dir)?;
    let csv_path = out_dir.join("sensitivity.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::Parse { line: 0, message: format!("{}: {e}", csv_path.display()) })?;
    w.write_record(["slice", "delta_cd"])
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    for (i, d) in deltas.iter().enumerate() {
        w.write_record([i.to_string(), d.to_string()])
            .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let svg_path = out_dir.join("sensitivity.svg");
    let chart = svg::bar_chart(
        "Per-slice drag sensitivity (leave one slice out)",
        "slice index (nose to tail)",
        "prediction shift",
        &deltas,
    );
    super::write_text(&svg_path, &chart)?;
    config::archive(
        out_dir,
        "sensitivity",
        &run,
        &[
            ("checkpoint", checkpoint.display().to_string()),
            ("cloud", cloud_path.display().to_string()),
            ("out", out_dir.display().to_string()),
        ],
    )?;

    if json {
        let report = serde_json::json!({
            "slices": deltas.len(),
            "deltas": deltas,
            "csv": csv_path.display().to_string(),
            "chart": svg_path.display().to_string(),
        });
        println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
    } else {
        let (mut peak, mut peak_abs) = (0usize, f64::NEG_INFINITY);
        for (i, d) in deltas.iter().enumerate() {
            if d.abs() > peak_abs {
                peak = i;
                peak_abs = d.abs();
            }
        }
        println!("computed {} slice deltas", deltas.len());
        println!("largest shift: slice {peak} ({:+.6e})", deltas[peak]);
        println!("wrote {} and {}", csv_path.display(), svg_path.display());
    }
    Ok(())
}
