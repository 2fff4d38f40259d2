//! `synth`: generate a labeled synthetic dataset — parametric car-like
//! bodies with an analytic drag proxy — plus its manifest, deterministically
//! from the seed.

use std::path::Path;

use cdslice::dataio::{build_synthetic_dataset, Split};
use cdslice::error::Result;

use crate::config::{self, RunConfig};

pub fn run(n_bodies: usize, out_dir: &Path, run: RunConfig, json: bool) -> Result<()> {
    super::ensure_dir(out_dir)?;
    let manifest = build_synthetic_dataset(n_bodies, &run.synth, run.seed, out_dir)?;
    config::archive(out_dir, "synth", &run, &[("out", out_dir.display().to_string())])?;

    let count = |s: Split| manifest.split_rows(s).count();
    let (train, val, test) = (count(Split::Train), count(Split::Val), count(Split::Test));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in manifest.rows() {
        lo = lo.min(row.cd);
        hi = hi.max(row.cd);
    }

    if json {
        let report = serde_json::json!({
            "bodies": manifest.rows().len(),
            "train": train,
            "val": val,
            "test": test,
            "cd_min": lo,
            "cd_max": hi,
            "manifest": out_dir.join("manifest.csv").display().to_string(),
        });
        println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
    } else {
        println!(
            "wrote {} bodies ({train} train / {val} val / {test} test) to {}",
            manifest.rows().len(),
            out_dir.display()
        );
        println!("label range: {lo:.6} to {hi:.6}");
    }
    Ok(())
}
