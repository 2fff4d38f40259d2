//! `predict`: one cloud in, one drag coefficient out, with the two stages
//! timed separately — slicing (geometry) and the forward pass (model) —
//! since the split matters for deployment budgets.

use std::path::Path;
use std::time::Instant;

use cdslice::error::Result;
use cdslice::geometry::slice_point_cloud;
use cdslice::model::checkpoint::load_checkpoint;
use cdslice::model::forward::predict;

use crate::config::{MaxPoints, Precision, RunConfig};

pub fn run(checkpoint: &Path, cloud_path: &Path, mut run: RunConfig, json: bool) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    run.adopt_model_dims(params.config());
    run.max_points = MaxPoints::Fixed(params.config().max_points);

    let cloud = super::load_cloud(cloud_path)?;

    let slice_started = Instant::now();
    let tensor = slice_point_cloud(&cloud, &run.slice_config())?;
    let slicing_ms = slice_started.elapsed().as_secs_f64() * 1e3;

    let forward_started = Instant::now();
    let cd = match run.precision {
        Precision::F32 => predict(&params, &tensor)?,
        Precision::F64 => predict(&params.convert::<f64>(), &tensor)?,
    };
    let forward_ms = forward_started.elapsed().as_secs_f64() * 1e3;

    if json {
        let report = serde_json::json!({
            "cd": cd,
            "slicing_ms": slicing_ms,
            "forward_ms": forward_ms,
        });
        println!("{}", serde_json::to_string(&report).expect("report serialize"));
    } else {
        println!("cd: {cd:.6}");
        println!("latency: slicing {slicing_ms:.3} ms, forward {forward_ms:.3} ms");
    }
    Ok(())
}
