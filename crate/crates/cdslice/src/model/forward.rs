//! Forward evaluation of the surrogate on slice tensors.
//!
//! The same code path serves training and inference: on a recording tape
//! every op is retained for backprop, on an evaluating tape nothing is, so
//! inference over a full-size padded tensor never accumulates graph state.
//!
//! Points are encoded compactly. A slice's padded rows carry no information,
//! so by default only the `counts[i]` real rows enter the encoder and the
//! pool runs over all of them; the `pool_include_padding` ablation instead
//! feeds the full padded block with an all-true mask.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffTensor, Tape};
use crate::error::{Error, Result};
use crate::geometry::SliceTensor;
use crate::model::{ModelConfig, ModelParams, POINT_FEATURES};
use crate::scalar::Scalar;

// ── Resolved section indices ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
struct AffineRefs {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct LstmDirRefs {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

/// Section indices into the canonical layout, resolved once per model so the
/// hot path never searches by name.
#[derive(Debug, Clone)]
struct ModelRefs {
    conv: [AffineRefs; 3],
    /// `[layer][direction]`, direction 0 forward, 1 backward.
    lstm: Vec<[LstmDirRefs; 2]>,
    head: [AffineRefs; 3],
}

impl ModelRefs {
    fn resolve(config: &ModelConfig) -> Self {
        // The canonical order is produced by `ModelConfig::sections`:
        // three conv pairs, then per layer/direction quads, then three
        // head pairs.
        let mut i = 0;
        let mut next = || {
            let v = i;
            i += 1;
            v
        };
        let conv = [(); 3].map(|_| AffineRefs { w: next(), b: next() });
        let lstm = (0..config.lstm_layers)
            .map(|_| {
                [(); 2].map(|_| LstmDirRefs {
                    w_ih: next(),
                    w_hh: next(),
                    b_ih: next(),
                    b_hh: next(),
                })
            })
            .collect();
        let head = [(); 3].map(|_| AffineRefs { w: next(), b: next() });
        ModelRefs { conv, lstm, head }
    }
}

// ── Taped model ──────────────────────────────────────────────────────────

/// Model parameters registered on a tape: leaves when recording (so
/// gradients flow to them), plain constants when evaluating.
pub struct TapedModel<T> {
    config: ModelConfig,
    tensors: Vec<DiffTensor<T>>,
    refs: ModelRefs,
}

impl<T: Scalar> TapedModel<T> {
    pub fn new(tape: &mut Tape<T>, params: &ModelParams<T>) -> Result<Self> {
        let tensors = params
            .sections()
            .iter()
            .map(|s| tape.leaf(s.values.clone(), s.shape.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TapedModel {
            config: params.config().clone(),
            refs: ModelRefs::resolve(params.config()),
            tensors,
        })
    }

    /// Wraps already-registered tensors (one per canonical section, in
    /// order) instead of registering fresh leaves. This is how gradient
    /// checking drives the model with externally perturbed parameters.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<DiffTensor<T>>) -> Result<Self> {
        let specs = config.sections();
        if specs.len() != tensors.len() {
            return Err(Error::ConfigMismatch {
                expected: format!("{} parameter sections", specs.len()),
                found: format!("{} tensors", tensors.len()),
            });
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "taped model section",
                    left: t.shape().to_vec(),
                    right: spec.shape.clone(),
                });
            }
        }
        Ok(TapedModel { config: config.clone(), refs: ModelRefs::resolve(config), tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter tensors in canonical section order, for gradient readback.
    pub fn tensors(&self) -> &[DiffTensor<T>] {
        &self.tensors
    }

    fn t(&self, idx: usize) -> &DiffTensor<T> {
        &self.tensors[idx]
    }
}

// ── Stages ───────────────────────────────────────────────────────────────

/// Shared point encoder: affine+ReLU chain over point rows, then a
/// channelwise masked max pool down to one embedding vector.
pub(crate) fn encode_points<T: Scalar>(
    tape: &mut Tape<T>,
    model: &TapedModel<T>,
    points: &DiffTensor<T>,
    mask: &[bool],
) -> Result<DiffTensor<T>> {
    let mut h = points.clone();
    for stage in &model.refs.conv {
        h = tape.affine(&h, model.t(stage.w), model.t(stage.b))?;
        h = tape.relu(&h)?;
    }
    tape.masked_max_pool(&h, mask)
}

/// Embeds one slice of a tensor. Empty slices (under default pooling) embed
/// to an untaped zero vector: no points, no signal, no gradient.
fn embed_slice<T: Scalar>(
    tape: &mut Tape<T>,
    model: &TapedModel<T>,
    tensor: &SliceTensor,
    slice: usize,
) -> Result<DiffTensor<T>> {
    let emb_dim = model.config.point_channels[2];
    let count = tensor.counts[slice] as usize;
    let rows = if model.config.pool_include_padding { tensor.max_points } else { count };
    if rows == 0 {
        return DiffTensor::constant(vec![T::zero(); emb_dim], vec![emb_dim]);
    }
    let data = tensor.slice_data(slice);
    let values: Vec<T> = data[..rows * POINT_FEATURES].iter().map(|&v| T::from_f32(v)).collect();
    let points = DiffTensor::constant(values, vec![rows, POINT_FEATURES])?;
    encode_points(tape, model, &points, &vec![true; rows])
}

/// One LSTM direction over a `[S, in]` sequence. Returns the hidden state
/// per original step index and the final state (the one produced after the
/// last step in traversal order).
///
/// Gate pre-activations are packed (input, forget, cell, output); the input
/// contribution for all steps is computed as a single affine pass up front.
pub(crate) fn lstm_direction<T: Scalar>(
    tape: &mut Tape<T>,
    model: &TapedModel<T>,
    seq: &DiffTensor<T>,
    layer: usize,
    reverse: bool,
) -> Result<(Vec<DiffTensor<T>>, DiffTensor<T>)> {
    let h_dim = model.config.lstm_hidden;
    let steps = seq.shape()[0];
    let refs = model.refs.lstm[layer][usize::from(reverse)];
    let proj = tape.affine(seq, model.t(refs.w_ih), model.t(refs.b_ih))?;

    let mut h = DiffTensor::constant(vec![T::zero(); h_dim], vec![h_dim])?;
    let mut c = h.clone();
    let mut outputs: Vec<Option<DiffTensor<T>>> = vec![None; steps];
    let order: Box<dyn Iterator<Item = usize>> =
        if reverse { Box::new((0..steps).rev()) } else { Box::new(0..steps) };
    for t in order {
        let x_part = tape.row(&proj, t)?;
        let h_part = tape.affine(&h, model.t(refs.w_hh), model.t(refs.b_hh))?;
        let pre = tape.add(&x_part, &h_part)?;
        let pre_i = tape.slice1(&pre, 0, h_dim)?;
        let pre_f = tape.slice1(&pre, h_dim, h_dim)?;
        let pre_g = tape.slice1(&pre, 2 * h_dim, h_dim)?;
        let pre_o = tape.slice1(&pre, 3 * h_dim, h_dim)?;
        let i_gate = tape.sigmoid(&pre_i)?;
        let f_gate = tape.sigmoid(&pre_f)?;
        let g_gate = tape.tanh_act(&pre_g)?;
        let o_gate = tape.sigmoid(&pre_o)?;
        let keep = tape.mul(&f_gate, &c)?;
        let write = tape.mul(&i_gate, &g_gate)?;
        c = tape.add(&keep, &write)?;
        let c_act = tape.tanh_act(&c)?;
        h = tape.mul(&o_gate, &c_act)?;
        outputs[t] = Some(h.clone());
    }
    let outputs = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
    Ok((outputs, h))
}

/// Runs the stacked bidirectional recurrence over the `[S, emb]` embedding
/// sequence and returns the concatenated final states of the last layer,
/// `[2 * hidden]`, forward half first.
pub(crate) fn encode_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    model: &TapedModel<T>,
    embeddings: &DiffTensor<T>,
    dropout_rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<DiffTensor<T>> {
    let layers = model.config.lstm_layers;
    let mut seq = embeddings.clone();
    let mut feature = None;
    for layer in 0..layers {
        let (fwd_hs, fwd_final) = lstm_direction(tape, model, &seq, layer, false)?;
        let (bwd_hs, bwd_final) = lstm_direction(tape, model, &seq, layer, true)?;
        if layer + 1 == layers {
            feature = Some(tape.concat(&fwd_final, &bwd_final, 0)?);
        } else {
            let joined = fwd_hs
                .iter()
                .zip(&bwd_hs)
                .map(|(f, b)| tape.concat(f, b, 0))
                .collect::<Result<Vec<_>>>()?;
            seq = tape.stack_rows(&joined)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                seq = tape.dropout(&seq, model.config.lstm_dropout, true, rng)?;
            }
        }
    }
    Ok(feature.expect("at least one layer"))
}

/// Regression head: two ReLU layers with dropout after the first, then a
/// single linear output.
fn regress<T: Scalar>(
    tape: &mut Tape<T>,
    model: &TapedModel<T>,
    feature: &DiffTensor<T>,
    dropout_rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<DiffTensor<T>> {
    let [fc1, fc2, fc3] = model.refs.head;
    let a1 = tape.affine(feature, model.t(fc1.w), model.t(fc1.b))?;
    let mut h = tape.relu(&a1)?;
    if let Some(rng) = dropout_rng.as_deref_mut() {
        h = tape.dropout(&h, model.config.head_dropout, true, rng)?;
    }
    let a2 = tape.affine(&h, model.t(fc2.w), model.t(fc2.b))?;
    h = tape.relu(&a2)?;
    tape.affine(&h, model.t(fc3.w), model.t(fc3.b))
}

// ── Entry points ─────────────────────────────────────────────────────────

fn check_tensor_dims(config: &ModelConfig, tensor: &SliceTensor) -> Result<()> {
    if tensor.slice_count != config.slice_count || tensor.max_points > config.max_points {
        return Err(Error::ConfigMismatch {
            expected: format!(
                "slice tensor {} x (<= {})",
                config.slice_count, config.max_points
            ),
            found: format!("slice tensor {} x {}", tensor.slice_count, tensor.max_points),
        });
    }
    Ok(())
}

/// Full forward pass for one car: `[1]` predicted drag coefficient.
/// `dropout_rng` being present switches on the training-time dropouts.
pub fn forward_car<T: Scalar>(
    tape: &mut Tape<T>,
    model: &TapedModel<T>,
    tensor: &SliceTensor,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<DiffTensor<T>> {
    check_tensor_dims(&model.config, tensor)?;
    let embeddings: Vec<DiffTensor<T>> = (0..tensor.slice_count)
        .map(|s| embed_slice(tape, model, tensor, s))
        .collect::<Result<_>>()?;
    let seq = tape.stack_rows(&embeddings)?;
    let feature = encode_sequence(tape, model, &seq, &mut dropout_rng)?;
    regress(tape, model, &feature, &mut dropout_rng)
}

/// Forward over a batch, stacking per-car predictions into `[n, 1]`. Cars
/// are processed in order, sharing the dropout stream sequentially.
pub fn forward_batch<T: Scalar>(
    tape: &mut Tape<T>,
    model: &TapedModel<T>,
    tensors: &[&SliceTensor],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<DiffTensor<T>> {
    if tensors.is_empty() {
        return Err(Error::EmptyInput("forward batch"));
    }
    let preds = tensors
        .iter()
        .map(|t| forward_car(tape, model, t, dropout_rng.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    tape.stack_rows(&preds)
}

/// Inference convenience: evaluates one car on a throwaway evaluating tape.
pub fn predict<T: Scalar>(params: &ModelParams<T>, tensor: &SliceTensor) -> Result<f64> {
    let mut tape = Tape::evaluating();
    let model = TapedModel::new(&mut tape, params)?;
    let pred = forward_car(&mut tape, &model, tensor, None)?;
    Ok(pred.item().as_f64())
}

/// Embedding of a bare point set through the shared encoder, outside any
/// slice tensor. Used to probe encoder properties (permutation and padding
/// invariance, max-pool set semantics).
pub fn embed_point_set<T: Scalar>(params: &ModelParams<T>, points: &[[f32; 2]]) -> Result<Vec<T>> {
    let mut tape = Tape::evaluating();
    let model = TapedModel::new(&mut tape, params)?;
    let emb_dim = params.config().point_channels[2];
    if points.is_empty() {
        return Ok(vec![T::zero(); emb_dim]);
    }
    let values: Vec<T> =
        points.iter().flat_map(|p| p.iter().map(|&v| T::from_f32(v))).collect();
    let input = DiffTensor::constant(values, vec![points.len(), POINT_FEATURES])?;
    let emb = encode_points(&mut tape, &model, &input, &vec![true; points.len()])?;
    Ok(emb.values().to_vec())
}

/// Per-slice leave-one-out sensitivity: element `i` is the prediction with
/// slice `i` emptied minus the baseline prediction, so a positive value
/// means the slice's points were holding the predicted drag down. An
/// already-empty slice contributes exactly zero.
pub fn slice_sensitivity<T: Scalar>(
    params: &ModelParams<T>,
    tensor: &SliceTensor,
) -> Result<Vec<f64>> {
    let baseline = predict(params, tensor)?;
    let stride = tensor.max_points * 2;
    let mut out = Vec::with_capacity(tensor.slice_count);
    for s in 0..tensor.slice_count {
        if tensor.counts[s] == 0 {
            out.push(0.0);
            continue;
        }
        let mut ablated = tensor.clone();
        ablated.counts[s] = 0;
        ablated.data[s * stride..(s + 1) * stride].fill(0.0);
        ablated.mask[s * tensor.max_points..(s + 1) * tensor.max_points].fill(false);
        out.push(predict(params, &ablated)? - baseline);
    }
    Ok(out)
}
