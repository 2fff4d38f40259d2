//! `preprocess`: slice every manifest sample into the tensor cache, one
//! file per id. Re-running writes byte-identical files. Samples that fail
//! (bin overflow under the strict policy, unreadable clouds) do not abort
//! the rest: every failure is collected and listed at the end, and the
//! command exits nonzero if there was any.

use std::path::Path;

use cdslice::dataio::load_manifest;
use cdslice::error::{Error, Result};
use cdslice::geometry::formats::write_slice_cache;
use cdslice::geometry::slice_point_cloud;
use rayon::prelude::*;

use crate::config::{self, RunConfig};

pub fn run(manifest_path: &Path, out_dir: &Path, mut run: RunConfig, json: bool) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let rows: Vec<_> = manifest.rows().iter().collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("manifest"));
    }

    // Resolve an `auto` capacity against the whole dataset up front so every
    // cache file declares the same geometry.
    let clouds = super::load_clouds(&manifest, &rows)?;
    let capacity = super::resolve_capacity_from_clouds(&mut run, &clouds)?;

    super::ensure_dir(out_dir)?;
    config::archive(
        out_dir,
        "preprocess",
        &run,
        &[
            ("manifest", manifest_path.display().to_string()),
            ("out", out_dir.display().to_string()),
        ],
    )?;

    let cfg = run.slice_config();
    let results: Vec<(String, Result<()>)> = rows
        .par_iter()
        .zip(clouds.par_iter())
        .map(|(row, cloud)| {
            let outcome = slice_point_cloud(cloud, &cfg)
                .and_then(|tensor| write_slice_cache(&tensor, &super::cache_file(out_dir, &row.id)));
            (row.id.clone(), outcome)
        })
        .collect();

    let failures: Vec<(&String, &Error)> = results
        .iter()
        .filter_map(|(id, r)| r.as_ref().err().map(|e| (id, e)))
        .collect();
    let written = results.len() - failures.len();

    if json {
        let report = serde_json::json!({
            "written": written,
            "failed": failures.len(),
            "slice_count": cfg.slice_count,
            "max_points": capacity,
            "failures": failures
                .iter()
                .map(|(id, e)| serde_json::json!({"id": id, "error": e.to_string()}))
                .collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
    } else {
        println!(
            "wrote {written} of {} tensors ({} x {}) to {}",
            results.len(),
            cfg.slice_count,
            capacity,
            out_dir.display()
        );
        for (id, e) in &failures {
            eprintln!("failed {id}: {e}");
        }
    }

    if let Some((id, _)) = failures.first() {
        return Err(Error::InvalidParameter {
            name: "manifest",
            message: format!(
                "{} of {} samples failed preprocessing (first: {id})",
                failures.len(),
                results.len()
            ),
        });
    }
    Ok(())
}
