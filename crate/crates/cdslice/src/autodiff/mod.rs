//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Values flow through [`DiffTensor`]s. A [`Tape`] records every operation
//! applied to tensors that trace back to a registered leaf; calling
//! [`Tape::backward`] on a scalar output replays the record in reverse and
//! accumulates vector-Jacobian products into per-node gradient buffers.
//!
//! Discipline: one training step builds and consumes one tape. Node ids are
//! append-only and strictly increasing, so an op's inputs always precede its
//! output and a single reverse sweep visits each op exactly once. Gradients
//! accumulate additively across fan-out. A tensor created under one tape must
//! not be fed to another.
//!
//! With recording disabled the same op methods run pure inference: nothing is
//! retained, intermediate buffers free as soon as the last tensor referencing
//! them drops.

pub mod gradcheck;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use std::sync::Arc;

pub type NodeId = usize;

// ── Tensor handle ──────────────────────────────────────────────────────────

/// Immutable value buffer plus an optional tape attachment.
///
/// Cloning is cheap (the buffer is shared). A tensor with `node == None` is a
/// constant: ops consume it without recording a dependency.
#[derive(Debug, Clone)]
pub struct DiffTensor<T> {
    shape: Vec<usize>,
    values: Arc<Vec<T>>,
    node: Option<NodeId>,
}

impl<T: Scalar> DiffTensor<T> {
    /// Constant tensor outside any tape.
    pub fn constant(values: Vec<T>, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::ShapeMismatch {
                op: "constant",
                left: vec![values.len()],
                right: shape,
            });
        }
        Ok(DiffTensor { shape, values: Arc::new(values), node: None })
    }

    pub fn scalar(v: T) -> Self {
        DiffTensor { shape: vec![1], values: Arc::new(vec![v]), node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Extracts the single element of a scalar tensor.
    pub fn item(&self) -> T {
        assert!(self.values.len() == 1, "item() on non-scalar tensor {:?}", self.shape);
        self.values[0]
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Same buffer under a new shape. Free: data is row-major either way.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.values.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape,
            });
        }
        Ok(DiffTensor { shape, values: Arc::clone(&self.values), node: self.node })
    }
}

// ── Kink tracking ──────────────────────────────────────────────────────────

/// Order-sensitive digest of every branch a forward pass takes at a
/// non-smooth point: the active side of each ReLU and the winning row of each
/// max pool. Two evaluations with equal digests took identical branches, so
/// central differences across them are trustworthy. The gradient checker
/// compares digests of the two perturbed runs to discard coordinates that
/// straddle a kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KinkDigest(u64);

impl KinkDigest {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;

    fn new() -> Self {
        KinkDigest(Self::OFFSET)
    }

    fn note(&mut self, word: u64) {
        self.0 ^= word;
        self.0 = self.0.wrapping_mul(Self::PRIME);
    }

    fn note_bit(&mut self, b: bool) {
        self.note(b as u64 + 1);
    }

    fn note_index(&mut self, i: usize) {
        self.note(i as u64 ^ 0x9e3779b97f4a7c15);
    }
}

// ── Tape internals ─────────────────────────────────────────────────────────

struct Node<T> {
    values: Arc<Vec<T>>,
    grad: Option<Vec<T>>,
}

enum Op<T> {
    /// out[r, o] = b[o] + sum_i x[r, i] * w[o, i]
    Affine { x: NodeId, w: NodeId, b: NodeId, out: NodeId, rows: usize, in_dim: usize, out_dim: usize },
    Relu { x: NodeId, out: NodeId },
    Sigmoid { out_id: NodeId, x: NodeId },
    Tanh { out_id: NodeId, x: NodeId },
    /// Per-channel max over rows with mask bit 1. `argmax[c]` is the winning
    /// row (lowest index on ties), `None` when no row is active.
    MaskedMaxPool { x: NodeId, out: NodeId, argmax: Vec<Option<usize>>, dim: usize },
    Concat { a: NodeId, b: NodeId, out: NodeId, axis: usize, a_shape: Vec<usize>, b_shape: Vec<usize> },
    /// Contiguous window of the flattened input.
    Narrow { x: NodeId, out: NodeId, offset: usize, len: usize },
    StackRows { rows: Vec<NodeId>, out: NodeId, row_len: usize },
    Add { a: NodeId, b: NodeId, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Sum { x: NodeId, out: NodeId },
    Dropout { x: NodeId, out: NodeId, kept: Vec<bool>, scale: T },
    /// out = mean_i huber(pred[i] - target[i]); targets are constants.
    SmoothL1Mean { pred: NodeId, out: NodeId, targets: Vec<T>, beta: T },
}

impl<T> Op<T> {
    fn out_id(&self) -> NodeId {
        match self {
            Op::Affine { out, .. }
            | Op::Relu { out, .. }
            | Op::MaskedMaxPool { out, .. }
            | Op::Concat { out, .. }
            | Op::Narrow { out, .. }
            | Op::StackRows { out, .. }
            | Op::Add { out, .. }
            | Op::Mul { out, .. }
            | Op::Sum { out, .. }
            | Op::Dropout { out, .. }
            | Op::SmoothL1Mean { out, .. } => *out,
            Op::Sigmoid { out_id, .. } | Op::Tanh { out_id, .. } => *out_id,
        }
    }
}

/// Recording context for one forward/backward cycle.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    ops: Vec<Op<T>>,
    recording: bool,
    consumed: bool,
    kinks: Option<KinkDigest>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::recording()
    }
}

impl<T: Scalar> Tape<T> {
    /// Tape that records ops for a later backward pass.
    pub fn recording() -> Self {
        Tape { nodes: Vec::new(), ops: Vec::new(), recording: true, consumed: false, kinks: None }
    }

    /// Pure-inference context: ops compute values and retain nothing.
    pub fn evaluating() -> Self {
        Tape { nodes: Vec::new(), ops: Vec::new(), recording: false, consumed: false, kinks: None }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Turns on branch digesting; see [`KinkDigest`].
    pub fn track_kinks(&mut self) {
        self.kinks = Some(KinkDigest::new());
    }

    pub fn kink_digest(&self) -> Option<KinkDigest> {
        self.kinks
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    /// Registers a differentiable leaf (a parameter). On an evaluating tape
    /// this degrades to a constant.
    pub fn leaf(&mut self, values: Vec<T>, shape: Vec<usize>) -> Result<DiffTensor<T>> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::ShapeMismatch { op: "leaf", left: vec![values.len()], right: shape });
        }
        let values = Arc::new(values);
        let node = if self.recording {
            Some(self.push_node(Arc::clone(&values)))
        } else {
            None
        };
        Ok(DiffTensor { shape, values, node })
    }

    fn push_node(&mut self, values: Arc<Vec<T>>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { values, grad: None });
        id
    }

    /// Node id for an op input, interning constants on first use.
    fn input_id(&mut self, t: &DiffTensor<T>) -> NodeId {
        match t.node {
            Some(id) => {
                assert!(
                    id < self.nodes.len() && Arc::ptr_eq(&self.nodes[id].values, &t.values),
                    "tensor belongs to a different tape"
                );
                id
            }
            None => self.push_node(Arc::clone(&t.values)),
        }
    }

    fn record(
        &mut self,
        values: Vec<T>,
        shape: Vec<usize>,
        build: impl FnOnce(NodeId) -> Op<T>,
    ) -> DiffTensor<T> {
        assert!(!self.consumed, "tape already consumed by backward");
        let values = Arc::new(values);
        let node = if self.recording {
            let out = self.push_node(Arc::clone(&values));
            let op = build(out);
            debug_assert!(op.out_id() == out);
            self.ops.push(op);
            Some(out)
        } else {
            None
        };
        DiffTensor { shape, values, node }
    }

    fn should_record(&self, inputs: &[&DiffTensor<T>]) -> bool {
        self.recording && inputs.iter().any(|t| t.node.is_some())
    }

    // ── Forward ops ────────────────────────────────────────────────────

    /// Shared affine map `x W^T + b` applied to a vector `[in]` or to each
    /// row of a matrix `[n, in]`. `w` is `[out, in]`, `b` is `[out]`.
    pub fn affine(
        &mut self,
        x: &DiffTensor<T>,
        w: &DiffTensor<T>,
        b: &DiffTensor<T>,
    ) -> Result<DiffTensor<T>> {
        let (rows, in_dim, vector_in) = match x.shape() {
            [n, d] => (*n, *d, false),
            [d] => (1usize, *d, true),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "affine input",
                    left: other.to_vec(),
                    right: vec![0, 0],
                })
            }
        };
        let (out_dim, w_in) = match w.shape() {
            [o, i] => (*o, *i),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "affine weight",
                    left: other.to_vec(),
                    right: vec![0, in_dim],
                })
            }
        };
        if w_in != in_dim {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        if b.shape() != [out_dim] {
            return Err(Error::ShapeMismatch {
                op: "affine bias",
                left: b.shape().to_vec(),
                right: vec![out_dim],
            });
        }

        let mut out = vec![T::zero(); rows * out_dim];
        kernels::affine_forward(x.values(), w.values(), b.values(), &mut out, rows, in_dim, out_dim);

        let shape = if vector_in { vec![out_dim] } else { vec![rows, out_dim] };
        if self.should_record(&[x, w, b]) {
            let (xi, wi, bi) = (self.input_id(x), self.input_id(w), self.input_id(b));
            Ok(self.record(out, shape, |o| Op::Affine {
                x: xi,
                w: wi,
                b: bi,
                out: o,
                rows,
                in_dim,
                out_dim,
            }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    /// Elementwise max(v, 0). The subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        let out: Vec<T> = x.values().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        if let Some(d) = self.kinks.as_mut() {
            for &v in x.values() {
                d.note_bit(v > T::zero());
            }
        }
        let shape = x.shape().to_vec();
        if self.should_record(&[x]) {
            let xi = self.input_id(x);
            Ok(self.record(out, shape, |o| Op::Relu { x: xi, out: o }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    pub fn sigmoid(&mut self, x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        let out: Vec<T> = x.values().iter().map(|&v| v.sigmoid()).collect();
        let shape = x.shape().to_vec();
        if self.should_record(&[x]) {
            let xi = self.input_id(x);
            Ok(self.record(out, shape, |o| Op::Sigmoid { x: xi, out_id: o }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    pub fn tanh_act(&mut self, x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        let out: Vec<T> = x.values().iter().map(|&v| v.tanh()).collect();
        let shape = x.shape().to_vec();
        if self.should_record(&[x]) {
            let xi = self.input_id(x);
            Ok(self.record(out, shape, |o| Op::Tanh { x: xi, out_id: o }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    /// Per-channel max over the rows of `x` (`[m, d]`) whose mask bit is set.
    /// No active rows yields the zero vector. Gradient flows only to each
    /// channel's winning row; ties resolve to the lowest row index.
    pub fn masked_max_pool(&mut self, x: &DiffTensor<T>, mask: &[bool]) -> Result<DiffTensor<T>> {
        let (m, d) = match x.shape() {
            [m, d] => (*m, *d),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "masked_max_pool",
                    left: other.to_vec(),
                    right: vec![mask.len(), 0],
                })
            }
        };
        if mask.len() != m {
            return Err(Error::MaskLength { expected: m, got: mask.len() });
        }

        let xs = x.values();
        let mut out = vec![T::zero(); d];
        let mut argmax: Vec<Option<usize>> = vec![None; d];
        for (r, row) in xs.chunks_exact(d).enumerate() {
            if !mask[r] {
                continue;
            }
            for c in 0..d {
                match argmax[c] {
                    None => {
                        argmax[c] = Some(r);
                        out[c] = row[c];
                    }
                    Some(_) if row[c] > out[c] => {
                        argmax[c] = Some(r);
                        out[c] = row[c];
                    }
                    _ => {}
                }
            }
        }
        if let Some(dgst) = self.kinks.as_mut() {
            for c in 0..d {
                dgst.note_index(argmax[c].map_or(usize::MAX, |r| r + 1));
            }
        }
        if self.should_record(&[x]) {
            let xi = self.input_id(x);
            Ok(self.record(out, vec![d], |o| Op::MaskedMaxPool { x: xi, out: o, argmax, dim: d }))
        } else {
            DiffTensor::constant(out, vec![d])
        }
    }

    /// Joins two tensors along `axis`. Vectors concat along axis 0; matrices
    /// along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, a: &DiffTensor<T>, b: &DiffTensor<T>, axis: usize) -> Result<DiffTensor<T>> {
        let mismatch = || Error::ShapeMismatch {
            op: "concat",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        };
        let (out, shape) = match (a.shape(), b.shape()) {
            ([p], [q]) => {
                if axis != 0 {
                    return Err(Error::InvalidParameter {
                        name: "axis",
                        message: format!("axis {axis} out of range for vectors"),
                    });
                }
                let mut v = Vec::with_capacity(p + q);
                v.extend_from_slice(a.values());
                v.extend_from_slice(b.values());
                (v, vec![p + q])
            }
            ([r1, c1], [r2, c2]) => match axis {
                0 => {
                    if c1 != c2 {
                        return Err(mismatch());
                    }
                    let mut v = Vec::with_capacity((r1 + r2) * c1);
                    v.extend_from_slice(a.values());
                    v.extend_from_slice(b.values());
                    (v, vec![r1 + r2, *c1])
                }
                1 => {
                    if r1 != r2 {
                        return Err(mismatch());
                    }
                    let mut v = Vec::with_capacity(r1 * (c1 + c2));
                    for r in 0..*r1 {
                        v.extend_from_slice(&a.values()[r * c1..(r + 1) * c1]);
                        v.extend_from_slice(&b.values()[r * c2..(r + 1) * c2]);
                    }
                    (v, vec![*r1, c1 + c2])
                }
                _ => {
                    return Err(Error::InvalidParameter {
                        name: "axis",
                        message: format!("axis {axis} out of range for matrices"),
                    })
                }
            },
            _ => return Err(mismatch()),
        };
        let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
        if self.should_record(&[a, b]) {
            let (ai, bi) = (self.input_id(a), self.input_id(b));
            Ok(self.record(out, shape, |o| Op::Concat { a: ai, b: bi, out: o, axis, a_shape, b_shape }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, x: &DiffTensor<T>, r: usize) -> Result<DiffTensor<T>> {
        let (rows, cols) = match x.shape() {
            [n, d] => (*n, *d),
            other => {
                return Err(Error::ShapeMismatch { op: "row", left: other.to_vec(), right: vec![0, 0] })
            }
        };
        if r >= rows {
            return Err(Error::InvalidParameter {
                name: "row",
                message: format!("row {r} out of range for {rows} rows"),
            });
        }
        self.narrow_flat(x, r * cols, cols, vec![cols])
    }

    /// Contiguous sub-vector `[offset, offset + len)` of a vector.
    pub fn slice1(&mut self, x: &DiffTensor<T>, offset: usize, len: usize) -> Result<DiffTensor<T>> {
        match x.shape() {
            [n] => {
                if offset + len > *n {
                    return Err(Error::InvalidParameter {
                        name: "slice1",
                        message: format!("window [{offset}, {}) out of range for length {n}", offset + len),
                    });
                }
                self.narrow_flat(x, offset, len, vec![len])
            }
            other => Err(Error::ShapeMismatch { op: "slice1", left: other.to_vec(), right: vec![0] }),
        }
    }

    fn narrow_flat(
        &mut self,
        x: &DiffTensor<T>,
        offset: usize,
        len: usize,
        shape: Vec<usize>,
    ) -> Result<DiffTensor<T>> {
        let out = x.values()[offset..offset + len].to_vec();
        if self.should_record(&[x]) {
            let xi = self.input_id(x);
            Ok(self.record(out, shape, |o| Op::Narrow { x: xi, out: o, offset, len }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack_rows(&mut self, rows: &[DiffTensor<T>]) -> Result<DiffTensor<T>> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("stack_rows"));
        }
        let row_len = match rows[0].shape() {
            [d] => *d,
            other => {
                return Err(Error::ShapeMismatch { op: "stack_rows", left: other.to_vec(), right: vec![0] })
            }
        };
        let mut out = Vec::with_capacity(rows.len() * row_len);
        for r in rows {
            if r.shape() != [row_len] {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: r.shape().to_vec(),
                    right: vec![row_len],
                });
            }
            out.extend_from_slice(r.values());
        }
        let shape = vec![rows.len(), row_len];
        let refs: Vec<&DiffTensor<T>> = rows.iter().collect();
        if self.should_record(&refs) {
            let ids: Vec<NodeId> = rows.iter().map(|r| self.input_id(r)).collect();
            Ok(self.record(out, shape, |o| Op::StackRows { rows: ids, out: o, row_len }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    pub fn add(&mut self, a: &DiffTensor<T>, b: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let out: Vec<T> = a.values().iter().zip(b.values()).map(|(&x, &y)| x + y).collect();
        let shape = a.shape().to_vec();
        if self.should_record(&[a, b]) {
            let (ai, bi) = (self.input_id(a), self.input_id(b));
            Ok(self.record(out, shape, |o| Op::Add { a: ai, b: bi, out: o }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &DiffTensor<T>, b: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let out: Vec<T> = a.values().iter().zip(b.values()).map(|(&x, &y)| x * y).collect();
        let shape = a.shape().to_vec();
        if self.should_record(&[a, b]) {
            let (ai, bi) = (self.input_id(a), self.input_id(b));
            Ok(self.record(out, shape, |o| Op::Mul { a: ai, b: bi, out: o }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        let s = x.values().iter().copied().sum();
        if self.should_record(&[x]) {
            let xi = self.input_id(x);
            Ok(self.record(vec![s], vec![1], |o| Op::Sum { x: xi, out: o }))
        } else {
            Ok(DiffTensor::scalar(s))
        }
    }

    /// Inverted dropout. Each element survives with probability `1 - rate`
    /// and is scaled by `1 / (1 - rate)`, so the expected value is the input;
    /// inference applies the identity. One uniform draw per element, in index
    /// order.
    pub fn dropout(
        &mut self,
        x: &DiffTensor<T>,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<DiffTensor<T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter {
                name: "dropout rate",
                message: format!("{rate} outside [0, 1)"),
            });
        }
        if !training || rate == 0.0 {
            return Ok(x.clone());
        }
        let scale = T::from_f64(1.0 / (1.0 - rate));
        let kept: Vec<bool> = (0..x.len()).map(|_| rng.gen::<f64>() >= rate).collect();
        let out: Vec<T> =
            x.values().iter().zip(&kept).map(|(&v, &k)| if k { v * scale } else { T::zero() }).collect();
        let shape = x.shape().to_vec();
        if self.should_record(&[x]) {
            let xi = self.input_id(x);
            Ok(self.record(out, shape, |o| Op::Dropout { x: xi, out: o, kept, scale }))
        } else {
            DiffTensor::constant(out, shape)
        }
    }

    /// Mean Smooth L1 (Huber) loss between predictions and constant targets:
    /// per element, `0.5 d^2` when `|d| < beta`, else `beta (|d| - 0.5 beta)`,
    /// averaged over all elements.
    pub fn smooth_l1_mean(
        &mut self,
        pred: &DiffTensor<T>,
        targets: &[T],
        beta: f64,
    ) -> Result<DiffTensor<T>> {
        if beta <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "beta",
                message: format!("{beta} must be positive"),
            });
        }
        if pred.len() != targets.len() || pred.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1_mean",
                left: pred.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let beta_t = T::from_f64(beta);
        let half = T::from_f64(0.5);
        let n = T::from_f64(pred.len() as f64);
        let mut acc = T::zero();
        for (&p, &t) in pred.values().iter().zip(targets) {
            let d = (p - t).abs();
            acc += if d < beta_t { half * d * d } else { beta_t * (d - half * beta_t) };
        }
        let loss = acc / n;
        if self.should_record(&[pred]) {
            let pi = self.input_id(pred);
            let targets = targets.to_vec();
            Ok(self.record(vec![loss], vec![1], |o| Op::SmoothL1Mean {
                pred: pi,
                out: o,
                targets,
                beta: beta_t,
            }))
        } else {
            Ok(DiffTensor::scalar(loss))
        }
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Replays the record in reverse from a scalar loss, filling gradient
    /// buffers lazily. Each op is visited exactly once; a node feeding
    /// several ops receives the sum of their contributions.
    pub fn backward(&mut self, loss: &DiffTensor<T>) -> Result<()> {
        assert!(!self.consumed, "tape already consumed by backward");
        let lid = loss.node.ok_or(Error::InvalidParameter {
            name: "loss",
            message: "tensor is not attached to this tape".into(),
        })?;
        if loss.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: loss.shape().to_vec(),
                right: vec![1],
            });
        }
        self.consumed = true;
        self.nodes[lid].grad = Some(vec![T::one()]);

        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            // A missing output gradient means the loss does not depend on
            // this op; skipping keeps the sweep a single pass.
            let out_grad = match self.nodes[op.out_id()].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(op, &out_grad);
            if op.out_id() == lid {
                // Keep the seed readable after the sweep.
                self.nodes[lid].grad = Some(out_grad);
            }
        }
        self.ops = ops;
        Ok(())
    }

    fn backward_op(&mut self, op: &Op<T>, g: &[T]) {
        match op {
            Op::Affine { x, w, b, rows, in_dim, out_dim, .. } => {
                let xv = Arc::clone(&self.nodes[*x].values);
                let wv = Arc::clone(&self.nodes[*w].values);
                kernels::affine_backward_input(
                    self.grad_buf(*x, rows * in_dim),
                    g,
                    &wv,
                    *rows,
                    *in_dim,
                    *out_dim,
                );
                kernels::affine_backward_weight(
                    self.grad_buf(*w, out_dim * in_dim),
                    g,
                    &xv,
                    *rows,
                    *in_dim,
                    *out_dim,
                );
                let db = self.grad_buf(*b, *out_dim);
                for r in 0..*rows {
                    for (o, dbo) in db.iter_mut().enumerate() {
                        *dbo += g[r * out_dim + o];
                    }
                }
            }
            Op::Relu { x, .. } => {
                let xv = Arc::clone(&self.nodes[*x].values);
                let dx = self.grad_buf(*x, xv.len());
                for ((d, &v), &go) in dx.iter_mut().zip(xv.iter()).zip(g) {
                    if v > T::zero() {
                        *d += go;
                    }
                }
            }
            Op::Sigmoid { x, out_id } => {
                let ov = Arc::clone(&self.nodes[*out_id].values);
                let dx = self.grad_buf(*x, ov.len());
                for ((d, &s), &go) in dx.iter_mut().zip(ov.iter()).zip(g) {
                    *d += go * s * (T::one() - s);
                }
            }
            Op::Tanh { x, out_id } => {
                let ov = Arc::clone(&self.nodes[*out_id].values);
                let dx = self.grad_buf(*x, ov.len());
                for ((d, &t), &go) in dx.iter_mut().zip(ov.iter()).zip(g) {
                    *d += go * (T::one() - t * t);
                }
            }
            Op::MaskedMaxPool { x, argmax, dim, .. } => {
                let len = self.nodes[*x].values.len();
                let dx = self.grad_buf(*x, len);
                for (c, am) in argmax.iter().enumerate() {
                    if let Some(r) = am {
                        dx[r * dim + c] += g[c];
                    }
                }
            }
            Op::Concat { a, b, axis, a_shape, b_shape, .. } => {
                let a_len: usize = a_shape.iter().product();
                let b_len: usize = b_shape.iter().product();
                match (*axis, a_shape.as_slice(), b_shape.as_slice()) {
                    (1, [r, c1], [_, c2]) => {
                        let (rows, c1, c2) = (*r, *c1, *c2);
                        let da = self.grad_buf(*a, a_len);
                        for r in 0..rows {
                            for c in 0..c1 {
                                da[r * c1 + c] += g[r * (c1 + c2) + c];
                            }
                        }
                        let db = self.grad_buf(*b, b_len);
                        for r in 0..rows {
                            for c in 0..c2 {
                                db[r * c2 + c] += g[r * (c1 + c2) + c1 + c];
                            }
                        }
                    }
                    _ => {
                        // Axis 0 (and the vector case) keep both operands
                        // contiguous in the output.
                        let da = self.grad_buf(*a, a_len);
                        for (d, &go) in da.iter_mut().zip(&g[..a_len]) {
                            *d += go;
                        }
                        let db = self.grad_buf(*b, b_len);
                        for (d, &go) in db.iter_mut().zip(&g[a_len..]) {
                            *d += go;
                        }
                    }
                }
            }
            Op::Narrow { x, offset, len, .. } => {
                let total = self.nodes[*x].values.len();
                let dx = self.grad_buf(*x, total);
                for (d, &go) in dx[*offset..offset + len].iter_mut().zip(g) {
                    *d += go;
                }
            }
            Op::StackRows { rows, row_len, .. } => {
                for (r, id) in rows.iter().enumerate() {
                    let dr = self.grad_buf(*id, *row_len);
                    for (d, &go) in dr.iter_mut().zip(&g[r * row_len..(r + 1) * row_len]) {
                        *d += go;
                    }
                }
            }
            Op::Add { a, b, .. } => {
                let da = self.grad_buf(*a, g.len());
                for (d, &go) in da.iter_mut().zip(g) {
                    *d += go;
                }
                let db = self.grad_buf(*b, g.len());
                for (d, &go) in db.iter_mut().zip(g) {
                    *d += go;
                }
            }
            Op::Mul { a, b, .. } => {
                let av = Arc::clone(&self.nodes[*a].values);
                let bv = Arc::clone(&self.nodes[*b].values);
                let da = self.grad_buf(*a, g.len());
                for ((d, &bv), &go) in da.iter_mut().zip(bv.iter()).zip(g) {
                    *d += go * bv;
                }
                let db = self.grad_buf(*b, g.len());
                for ((d, &av), &go) in db.iter_mut().zip(av.iter()).zip(g) {
                    *d += go * av;
                }
            }
            Op::Sum { x, .. } => {
                let len = self.nodes[*x].values.len();
                let dx = self.grad_buf(*x, len);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Dropout { x, kept, scale, .. } => {
                let dx = self.grad_buf(*x, kept.len());
                for ((d, &k), &go) in dx.iter_mut().zip(kept).zip(g) {
                    if k {
                        *d += go * *scale;
                    }
                }
            }
            Op::SmoothL1Mean { pred, targets, beta, .. } => {
                let pv = Arc::clone(&self.nodes[*pred].values);
                let n = T::from_f64(targets.len() as f64);
                let dp = self.grad_buf(*pred, targets.len());
                for ((d, (&p, &t)), _) in dp.iter_mut().zip(pv.iter().zip(targets)).zip(0..) {
                    let diff = p - t;
                    let clamped = if diff > *beta {
                        *beta
                    } else if diff < -*beta {
                        -*beta
                    } else {
                        diff
                    };
                    *d += g[0] * clamped / n;
                }
            }
        }
    }

    fn grad_buf(&mut self, id: NodeId, len: usize) -> &mut [T] {
        let slot = &mut self.nodes[id].grad;
        if slot.is_none() {
            *slot = Some(vec![T::zero(); len]);
        }
        slot.as_mut().unwrap()
    }

    /// Gradient of a tensor after [`Tape::backward`]. `None` when the tensor
    /// is not on this tape or received no gradient.
    pub fn grad(&self, t: &DiffTensor<T>) -> Option<&[T]> {
        let id = t.node?;
        self.nodes.get(id).and_then(|n| n.grad.as_deref())
    }
}

// ── Dense kernels ──────────────────────────────────────────────────────────

mod kernels {
    use crate::scalar::Scalar;

    /// Dot product with eight independent accumulators. The fixed combine
    /// order keeps results bit-reproducible while letting the lanes pipeline.
    fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
        debug_assert!(a.len() == b.len());
        let mut acc = [T::zero(); 8];
        let chunks = a.len() / 8;
        for k in 0..chunks {
            let (x, y) = (&a[k * 8..k * 8 + 8], &b[k * 8..k * 8 + 8]);
            for l in 0..8 {
                acc[l] = acc[l] + x[l] * y[l];
            }
        }
        let mut tail = T::zero();
        for i in chunks * 8..a.len() {
            tail = tail + a[i] * b[i];
        }
        (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
    }

    /// y[r, :] += alpha * x[r, :] pattern over one row.
    fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    pub fn affine_forward<T: Scalar>(
        x: &[T],
        w: &[T],
        b: &[T],
        out: &mut [T],
        rows: usize,
        in_dim: usize,
        out_dim: usize,
    ) {
        for r in 0..rows {
            let xr = &x[r * in_dim..(r + 1) * in_dim];
            let or = &mut out[r * out_dim..(r + 1) * out_dim];
            for (o, oo) in or.iter_mut().enumerate() {
                *oo = b[o] + dot(&w[o * in_dim..(o + 1) * in_dim], xr);
            }
        }
    }

    /// dx[r, i] += sum_o g[r, o] * w[o, i]
    pub fn affine_backward_input<T: Scalar>(
        dx: &mut [T],
        g: &[T],
        w: &[T],
        rows: usize,
        in_dim: usize,
        out_dim: usize,
    ) {
        for r in 0..rows {
            let gr = &g[r * out_dim..(r + 1) * out_dim];
            let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
            for (o, &go) in gr.iter().enumerate() {
                axpy(go, &w[o * in_dim..(o + 1) * in_dim], dxr);
            }
        }
    }

    /// dw[o, i] += sum_r g[r, o] * x[r, i]
    pub fn affine_backward_weight<T: Scalar>(
        dw: &mut [T],
        g: &[T],
        x: &[T],
        rows: usize,
        in_dim: usize,
        out_dim: usize,
    ) {
        for r in 0..rows {
            let gr = &g[r * out_dim..(r + 1) * out_dim];
            let xr = &x[r * in_dim..(r + 1) * in_dim];
            for (o, &go) in gr.iter().enumerate() {
                axpy(go, xr, &mut dw[o * in_dim..(o + 1) * in_dim]);
            }
        }
    }
}
