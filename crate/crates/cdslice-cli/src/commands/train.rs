//! `train`: fit the model on a manifest's train split, tracking the best
//! epoch on the validation split. Outputs land in the run directory: the
//! best and final checkpoints, the per-epoch log, and the archived
//! configuration. Identical seeds and inputs reproduce identical outputs.
//!
//! Tensors come from a slice cache when one is configured (environment
//! variable, flag, or config file — in that order), otherwise clouds are
//! sliced in memory. Resuming from a checkpoint requires the checkpoint's
//! architecture to match the resolved configuration exactly; optimizer
//! state is not carried across runs, so a resume restarts the learning-rate
//! bias corrections.

use std::path::Path;

use cdslice::Scalar;
use cdslice::dataio::{load_manifest, Split};
use cdslice::error::{Error, Result};
use cdslice::geometry::SliceTensor;
use cdslice::model::checkpoint::{load_checkpoint, save_checkpoint};
use cdslice::model::ModelParams;
use cdslice::training::{train, write_train_log, EpochRecord};

use crate::config::{self, Precision, RunConfig};
use super::Sample;

pub struct Paths<'a> {
    pub manifest: &'a Path,
    pub out_dir: &'a Path,
    pub cache_flag: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

pub fn run(paths: Paths<'_>, mut run: RunConfig, json: bool) -> Result<()> {
    let manifest = load_manifest(paths.manifest)?;
    let train_rows: Vec<_> = manifest.split_rows(Split::Train).collect();
    let val_rows: Vec<_> = manifest.split_rows(Split::Val).collect();
    if train_rows.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }
    if val_rows.is_empty() {
        return Err(Error::EmptyInput("validation split"));
    }

    let cache = super::cache_dir_for_reading(paths.cache_flag, &run);
    match &cache {
        Some(dir) => {
            let all: Vec<_> = manifest.rows().iter().collect();
            super::resolve_capacity_from_cache(&mut run, dir, &all)?;
        }
        None => {
            // Capacity is a dataset property: scan every row, not just the
            // training split, so later evaluation slices under the same
            // geometry the checkpoint was trained with.
            let all: Vec<_> = manifest.rows().iter().collect();
            let clouds = super::load_clouds(&manifest, &all)?;
            super::resolve_capacity_from_clouds(&mut run, &clouds)?;
        }
    }

    let train_samples = super::load_samples(&manifest, &train_rows, &run, cache.as_deref())?;
    let val_samples = super::load_samples(&manifest, &val_rows, &run, cache.as_deref())?;

    super::ensure_dir(paths.out_dir)?;
    let mut inputs = vec![
        ("manifest", paths.manifest.display().to_string()),
        ("out", paths.out_dir.display().to_string()),
    ];
    if let Some(dir) = &cache {
        inputs.push(("cache", dir.display().to_string()));
    }
    if let Some(ckpt) = paths.resume {
        inputs.push(("resume", ckpt.display().to_string()));
    }
    config::archive(paths.out_dir, "train", &run, &inputs)?;

    match run.precision {
        Precision::F32 => fit::<f32>(&run, &paths, &train_samples, &val_samples, json),
        Precision::F64 => fit::<f64>(&run, &paths, &train_samples, &val_samples, json),
    }
}

fn fit<T: Scalar>(
    run: &RunConfig,
    paths: &Paths<'_>,
    train_samples: &[Sample],
    val_samples: &[Sample],
    json: bool,
) -> Result<()> {
    let model_cfg = run.model_config();
    let initial: ModelParams<T> = match paths.resume {
        Some(ckpt) => {
            let loaded = load_checkpoint(ckpt)?;
            if *loaded.config() != model_cfg {
                return Err(Error::ConfigMismatch {
                    expected: format!(
                        "resume requires the checkpoint architecture to equal the resolved \
                         configuration: {}",
                        serde_json::to_string(&model_cfg).expect("config serialize")
                    ),
                    found: serde_json::to_string(loaded.config()).expect("config serialize"),
                });
            }
            loaded.convert::<T>()
        }
        None => ModelParams::init(&model_cfg)?,
    };

    let train_pairs: Vec<(SliceTensor, f64)> = train_samples.iter().map(Sample::pair).collect();
    let val_pairs: Vec<(SliceTensor, f64)> = val_samples.iter().map(Sample::pair).collect();

    let outcome = train(initial, &train_pairs, &val_pairs, &run.train_config())?;

    let best_path = paths.out_dir.join("best.cdpm");
    let final_path = paths.out_dir.join("final.cdpm");
    let log_path = paths.out_dir.join("train_log.csv");
    save_checkpoint(&outcome.best, &best_path)?;
    save_checkpoint(&outcome.params, &final_path)?;
    write_train_log(&log_path, &outcome.log)?;

    let best: &EpochRecord = &outcome.log[outcome.best_epoch - 1];
    let last = outcome.log.last().expect("at least one epoch");
    if json {
        let report = serde_json::json!({
            "epochs": outcome.log.len(),
            "train_samples": train_pairs.len(),
            "val_samples": val_pairs.len(),
            "final_train_loss": last.train_loss,
            "best_epoch": outcome.best_epoch,
            "best_val_mse": best.val_mse,
            "best_val_mae": best.val_mae,
            "best_val_r2": best.val_r2,
            "best_checkpoint": best_path.display().to_string(),
            "final_checkpoint": final_path.display().to_string(),
            "train_log": log_path.display().to_string(),
        });
        println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
    } else {
        println!(
            "trained {} epochs on {} samples ({} validation)",
            outcome.log.len(),
            train_pairs.len(),
            val_pairs.len()
        );
        let r2 = best
            .val_r2
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "undefined".into());
        println!(
            "best epoch {}: val mse {:.6e} mae {:.6e} r2 {}",
            outcome.best_epoch, best.val_mse, best.val_mae, r2
        );
        println!(
            "wrote {}, {}, {}",
            best_path.display(),
            final_path.display(),
            log_path.display()
        );
    }
    Ok(())
}
