//! `report`: render the training and evaluation artifacts as four SVG
//! figures — training loss curve, validation score curve, truth-versus-
//! prediction scatter with the y = x reference, and the residual histogram.

use std::path::Path;

use cdslice::error::Result;
use cdslice::metrics::residual_histogram;
use cdslice::training::read_train_log;

use crate::config::{self, RunConfig};
use crate::svg;

pub fn run(
    train_log_path: &Path,
    eval_csv_path: &Path,
    out_dir: &Path,
    run: RunConfig,
    json: bool,
) -> Result<()> {
    let log = read_train_log(train_log_path)?;
    let eval_rows = super::read_prediction_csv(eval_csv_path)?;
    super::ensure_dir(out_dir)?;

    let loss: Vec<(f64, f64)> =
        log.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
    let loss_svg = svg::line_chart("Training loss", "epoch", "mean loss", &loss);

    // Epochs whose validation truths had zero variance carry no score; the
    // curve simply skips them.
    let r2: Vec<(f64, f64)> = log
        .iter()
        .filter_map(|r| r.val_r2.map(|v| (r.epoch as f64, v)))
        .collect();
    let r2_svg = svg::line_chart("Validation R^2", "epoch", "R^2", &r2);

    let points: Vec<(f64, f64)> = eval_rows.iter().map(|&(t, p, _)| (t, p)).collect();
    let scatter_svg = svg::scatter_with_identity(
        "Predicted vs true drag coefficient",
        "true value",
        "predicted value",
        &points,
    );

    let residuals: Vec<f64> = eval_rows.iter().map(|&(_, _, r)| r).collect();
    let bins = residual_histogram(&residuals, run.histogram_bin_width)?;
    let hist_svg = svg::histogram(
        "Prediction error distribution",
        "residual (predicted - true)",
        "count",
        &bins,
        run.histogram_bin_width,
    );

    let files = [
        ("loss_curve.svg", loss_svg),
        ("val_r2.svg", r2_svg),
        ("scatter.svg", scatter_svg),
        ("error_hist.svg", hist_svg),
    ];
    for (name, content) in &files {
        super::write_text(&out_dir.join(name), content)?;
    }
    config::archive(
        out_dir,
        "report",
        &run,
        &[
            ("train_log", train_log_path.display().to_string()),
            ("eval_csv", eval_csv_path.display().to_string()),
            ("out", out_dir.display().to_string()),
        ],
    )?;

    if json {
        let report = serde_json::json!({
            "figures": files
                .iter()
                .map(|(name, _)| out_dir.join(name).display().to_string())
                .collect::<Vec<_>>(),
            "epochs": log.len(),
            "samples": eval_rows.len(),
        });
        println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
    } else {
        println!(
            "rendered 4 figures from {} epochs and {} samples into {}",
            log.len(),
            eval_rows.len(),
            out_dir.display()
        );
    }
    Ok(())
}
