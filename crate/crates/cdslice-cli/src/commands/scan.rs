//! `scan`: summarize a manifest — the point capacity the dataset needs and
//! per-split label statistics — without writing anything unless asked.

use std::path::Path;

use cdslice::dataio::{dataset_stats, load_manifest, DatasetStats, SplitSummary};
use cdslice::error::Result;

use crate::config::{self, MaxPoints, RunConfig};

fn split_line(name: &str, s: &SplitSummary) -> String {
    match (s.cd_min, s.cd_mean, s.cd_max) {
        (Some(min), Some(mean), Some(max)) => format!(
            "{name}: n={} cd min={:.6} mean={:.6} max={:.6}",
            s.count, min, mean, max
        ),
        _ => format!("{name}: n=0"),
    }
}

pub fn render_human(stats: &DatasetStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("slices: {}\n", stats.slice_count));
    out.push_str(&format!("max points per slice: {}\n", stats.max_points_per_slice));
    out.push_str(&split_line("train", &stats.train));
    out.push('\n');
    out.push_str(&split_line("val", &stats.val));
    out.push('\n');
    out.push_str(&split_line("test", &stats.test));
    out.push('\n');
    out
}

pub fn run(
    manifest_path: &Path,
    out_dir: Option<&Path>,
    mut run: RunConfig,
    json: bool,
) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let stats = dataset_stats(&manifest, run.slice_count)?;

    if json {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    } else {
        print!("{}", render_human(&stats));
    }

    if let Some(dir) = out_dir {
        super::ensure_dir(dir)?;
        // Archive what the scan measured, so the stats file is reproducible
        // from its own directory.
        run.max_points = MaxPoints::Fixed(stats.max_points_per_slice);
        super::write_text(
            &dir.join("stats.json"),
            &format!("{}\n", serde_json::to_string_pretty(&stats).expect("stats serialize")),
        )?;
        config::archive(
            dir,
            "scan",
            &run,
            &[("manifest", manifest_path.display().to_string())],
        )?;
    }
    Ok(())
}
