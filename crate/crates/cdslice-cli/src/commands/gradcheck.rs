//! `gradcheck`: verify the reverse-mode gradients of the full model against
//! central finite differences on a deterministic probe input, section by
//! section. Defaults to the minimal architecture in 64-bit mode — small
//! enough to finish in seconds, wide enough to cross every backward path.
//! Exits nonzero when any coordinate disagrees beyond tolerance.

use cdslice::autodiff::gradcheck::{
    check_gradients, CheckSection, GradCheckReport, GradCheckSettings,
};
use cdslice::autodiff::{DiffTensor, Tape};
use cdslice::Scalar;
use cdslice::error::{Error, Result};
use cdslice::geometry::SliceTensor;
use cdslice::model::forward::{forward_car, TapedModel};
use cdslice::model::{ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, RunConfig};

/// Deterministic probe tensor: slice 0 left empty (when there is more than
/// one slice) to cover the empty-slice path, slice 1 filled to capacity to
/// cover full masks, the rest drawn uniformly.
fn probe_tensor(config: &ModelConfig, seed: u64) -> SliceTensor {
    let (s, m) = (config.slice_count, config.max_points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0f32; s * m * 2];
    let mut mask = vec![false; s * m];
    let mut counts = vec![0u32; s];
    for i in 0..s {
        let count = if i == 0 && s > 1 {
            0
        } else if i == 1 || s == 1 {
            m
        } else {
            rng.gen_range(1..=m)
        };
        counts[i] = count as u32;
        for row in 0..count {
            let off = (i * m + row) * 2;
            data[off] = rng.gen_range(-1.0f32..1.0);
            data[off + 1] = rng.gen_range(-1.0f32..1.0);
            mask[i * m + row] = true;
        }
    }
    SliceTensor { slice_count: s, max_points: m, data, mask, counts, source_id: format!("probe-{seed}") }
}

fn check<T: Scalar>(run: &RunConfig, json: bool) -> Result<GradCheckReport> {
    let model_cfg = run.model_config();
    let params: ModelParams<T> = ModelParams::init(&model_cfg)?;
    let tensor = probe_tensor(&model_cfg, run.seed);
    tensor.validate()?;

    let sections: Vec<CheckSection<T>> = params
        .sections()
        .iter()
        .map(|s| CheckSection::new(s.name.clone(), s.values.clone(), s.shape.clone()))
        .collect();
    let target = [T::from_f64(0.5)];
    let beta = run.huber_beta;
    let settings = GradCheckSettings {
        epsilon: run.gc_epsilon,
        tolerance: run.gc_tolerance,
        ..GradCheckSettings::default()
    };

    let report = check_gradients(
        &|tape: &mut Tape<T>, leaves: &[DiffTensor<T>]| {
            let model = TapedModel::from_tensors(&model_cfg, leaves.to_vec())?;
            let pred = forward_car(tape, &model, &tensor, None)?;
            tape.smooth_l1_mean(&pred, &target, beta)
        },
        &sections,
        &settings,
    )?;

    if json {
        let doc = serde_json::json!({
            "passed": report.passed,
            "max_rel_err": report.max_rel_err,
            "tolerance": report.tolerance,
            "precision": run.precision,
            "sections": report
                .sections
                .iter()
                .map(|s| serde_json::json!({
                    "name": s.name,
                    "checked": s.checked,
                    "skipped_kinks": s.skipped_kinks,
                    "max_rel_err": s.max_rel_err,
                }))
                .collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("report serialize"));
    } else {
        print!("{}", report.render());
    }
    Ok(report)
}

pub fn run(run_config: RunConfig, json: bool) -> Result<()> {
    if run_config.max_points.fixed().is_none() {
        return Err(Error::InvalidParameter {
            name: "max_points",
            message: "gradient checking needs a fixed point capacity, not \"auto\"".into(),
        });
    }
    let report = match run_config.precision {
        Precision::F32 => check::<f32>(&run_config, json)?,
        Precision::F64 => check::<f64>(&run_config, json)?,
    };
    if !report.passed {
        return Err(Error::InvalidParameter {
            name: "gradients",
            message: format!(
                "max relative error {:.3e} exceeds tolerance {:.3e}",
                report.max_rel_err, report.tolerance
            ),
        });
    }
    Ok(())
}
