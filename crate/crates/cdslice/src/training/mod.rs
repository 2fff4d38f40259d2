//! Adam training over labeled slice tensors.
//!
//! The loop is strictly sequential and fully seeded: epoch `e` (0-based)
//! shuffles with stream `2e` and draws dropout with stream `2e + 1` of a
//! ChaCha generator seeded from the training seed, batches are visited in
//! shuffle order with the final partial batch included, and every reduction
//! runs in a fixed order. Two runs from the same initial parameters, data,
//! and config therefore produce bit-identical parameters; only the logged
//! wall-clock seconds differ.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::SliceTensor;
use crate::metrics::{compute_metrics, Metrics};
use crate::model::forward::{forward_batch, forward_car, TapedModel};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Quadratic-to-linear crossover of the Huber loss.
    pub huber_beta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Optional global L2 gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    /// Seeds the shuffle and dropout streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 100,
            huber_beta: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_clip: None,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                message: format!("must be positive and finite, got {}", self.learning_rate),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                message: "must be at least 1".into(),
            });
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter {
                name: "epochs",
                message: "must be at least 1".into(),
            });
        }
        if !(self.huber_beta > 0.0) {
            return Err(Error::InvalidParameter {
                name: "huber_beta",
                message: format!("must be positive, got {}", self.huber_beta),
            });
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("{b} outside [0, 1)"),
                });
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "adam_epsilon",
                message: format!("must be positive, got {}", self.adam_epsilon),
            });
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "grad_clip",
                    message: format!("must be positive and finite, got {c}"),
                });
            }
        }
        Ok(())
    }
}

// ── Adam ─────────────────────────────────────────────────────────────────

/// First and second moment buffers, one pair per parameter section in
/// canonical order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> =
            params.sections().iter().map(|s| vec![T::zero(); s.values.len()]).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every section. `grads` must align with the params'
/// canonical section order; a non-finite gradient aborts with the section
/// named. Optional clipping rescales the whole gradient so its global L2
/// norm is at most `grad_clip` before any moment update.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &mut [Vec<T>],
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let n_sections = params.sections().len();
    if grads.len() != n_sections {
        return Err(Error::ShapeMismatch {
            op: "adam gradients",
            left: vec![grads.len()],
            right: vec![n_sections],
        });
    }
    for (sec, g) in params.sections().iter().zip(grads.iter()) {
        if g.len() != sec.values.len() {
            return Err(Error::ShapeMismatch {
                op: "adam gradient section",
                left: vec![g.len()],
                right: vec![sec.values.len()],
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { section: sec.name.clone() });
        }
    }

    if let Some(clip) = config.grad_clip {
        let norm_sq: f64 =
            grads.iter().flat_map(|g| g.iter()).map(|&v| v.as_f64() * v.as_f64()).sum();
        let norm = norm_sq.sqrt();
        if norm > clip {
            let scale = T::from_f64(clip / norm);
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }

    state.step += 1;
    let b1 = config.adam_beta1;
    let b2 = config.adam_beta2;
    // Bias corrections in f64; they approach 1 as steps accumulate.
    let corr1 = 1.0 - b1.powi(state.step as i32);
    let corr2 = 1.0 - b2.powi(state.step as i32);
    let lr = T::from_f64(config.learning_rate);
    let eps = T::from_f64(config.adam_epsilon);
    let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
    let (nb1, nb2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    let (ic1, ic2) = (T::from_f64(1.0 / corr1), T::from_f64(1.0 / corr2));

    for (k, sec) in params.sections_mut().iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((p, &g), mi), vi) in
            sec.values.iter_mut().zip(&grads[k]).zip(m.iter_mut()).zip(v.iter_mut())
        {
            *mi = b1t * *mi + nb1 * g;
            *vi = b2t * *vi + nb2 * g * g;
            let m_hat = *mi * ic1;
            let v_hat = *vi * ic2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

// ── Train log ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    /// Empty in the CSV when the validation truths have zero variance.
    pub val_r2: Option<f64>,
    pub val_maxae: f64,
    /// Wall-clock epoch duration; the one nondeterministic column.
    pub seconds: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("is_io_error guarantees an Io kind"),
        }
    } else {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse { line, message: e.to_string() }
    }
}

pub fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for rec in log {
        w.serialize(rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_train_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| csv_error(path, e))
}

// ── Evaluation ───────────────────────────────────────────────────────────

/// Inference predictions and metrics over labeled tensors, in input order.
/// Dropout is inactive; nothing is retained between cars.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    data: &[(SliceTensor, f64)],
) -> Result<(Metrics, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let mut tape = Tape::evaluating();
    let model = TapedModel::new(&mut tape, params)?;
    let mut preds = Vec::with_capacity(data.len());
    for (tensor, _) in data {
        preds.push(forward_car(&mut tape, &model, tensor, None)?.item().as_f64());
    }
    let truths: Vec<f64> = data.iter().map(|d| d.1).collect();
    let metrics = compute_metrics(&truths, &preds)?;
    Ok((metrics, preds))
}

// ── Training loop ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters after the final epoch.
    pub params: ModelParams<T>,
    /// Parameters from the epoch with the best validation score.
    pub best: ModelParams<T>,
    /// 1-based epoch the best parameters came from.
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Whether `candidate` beats `best` on validation: higher coefficient of
/// determination wins, with mean squared error breaking ties (and carrying
/// the comparison when the coefficient is undefined).
pub fn improves_validation(candidate: &Metrics, best: &Metrics) -> bool {
    let key = |m: &Metrics| m.r_squared.unwrap_or(f64::NEG_INFINITY);
    match key(candidate).partial_cmp(&key(best)) {
        Some(std::cmp::Ordering::Greater) => true,
        Some(std::cmp::Ordering::Equal) => candidate.mse < best.mse,
        _ => false,
    }
}

pub fn train<T: Scalar>(
    initial: ModelParams<T>,
    train_set: &[(SliceTensor, f64)],
    val_set: &[(SliceTensor, f64)],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }

    let mut params = initial;
    let mut state = AdamState::new(&params);
    let n = train_set.len();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(ModelParams<T>, usize, Metrics)> = None;

    for e in 0..config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(2 * e as u64);
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
        dropout_rng.set_stream(2 * e as u64 + 1);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let tensors: Vec<&SliceTensor> = chunk.iter().map(|&i| &train_set[i].0).collect();
            let targets: Vec<T> =
                chunk.iter().map(|&i| T::from_f64(train_set[i].1)).collect();
            let mut tape = Tape::recording();
            let model = TapedModel::new(&mut tape, &params)?;
            let preds = forward_batch(&mut tape, &model, &tensors, Some(&mut dropout_rng))?;
            let loss = tape.smooth_l1_mean(&preds, &targets, config.huber_beta)?;
            let loss_value = loss.item().as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {}", e + 1),
                });
            }
            loss_sum += loss_value * chunk.len() as f64;
            tape.backward(&loss)?;
            let mut grads: Vec<Vec<T>> = model
                .tensors()
                .iter()
                .zip(params.sections())
                .map(|(t, sec)| {
                    tape.grad(t)
                        .map(|g| g.to_vec())
                        .unwrap_or_else(|| vec![T::zero(); sec.values.len()])
                })
                .collect();
            adam_step(&mut params, &mut grads, &mut state, config)?;
        }

        let (metrics, _) = evaluate(&params, val_set)?;
        let record = EpochRecord {
            epoch: e + 1,
            train_loss: loss_sum / n as f64,
            val_mse: metrics.mse,
            val_mae: metrics.mae,
            val_r2: metrics.r_squared,
            val_maxae: metrics.max_ae,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>4}: train_loss {:.6e}, val_mse {:.6e}, val_mae {:.6e}, r2 {}, {:.1}s",
            record.epoch,
            record.train_loss,
            record.val_mse,
            record.val_mae,
            record.val_r2.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into()),
            record.seconds
        );
        log.push(record);
        if best.as_ref().map(|(_, _, b)| improves_validation(&metrics, b)).unwrap_or(true) {
            best = Some((params.clone(), e + 1, metrics));
        }
    }

    let (best_params, best_epoch, _) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { params, best: best_params, best_epoch, log })
}
