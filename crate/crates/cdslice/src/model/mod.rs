//! The slice-sequence surrogate: per-slice point encoder, bidirectional
//! recurrence over slices, and a small regression head.
//!
//! A car enters as a slice tensor. Each non-empty slice's (y, z) points go
//! through a shared three-stage affine+ReLU chain and a channelwise masked
//! max pool, giving one embedding per slice; empty slices embed to the zero
//! vector. The embedding sequence runs through stacked bidirectional LSTM
//! layers, and the concatenated final states of the last layer feed a
//! two-hidden-layer MLP that outputs the drag coefficient.
//!
//! Parameters live in named, ordered sections. The order is canonical: it
//! fixes the initialization stream, the optimizer state layout, and the
//! checkpoint layout all at once.

pub mod checkpoint;
pub mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Input features per point: the (y, z) cross-section coordinates.
pub const POINT_FEATURES: usize = 2;

/// LSTM gate blocks per cell, in the fixed order (input, forget, cell,
/// output) used when slicing the packed gate pre-activations.
pub const LSTM_GATES: usize = 4;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Slices per car; the recurrence length.
    pub slice_count: usize,
    /// Point capacity per slice in the input tensor.
    pub max_points: usize,
    /// Widths of the three shared point-encoder stages; the last is the
    /// per-slice embedding width.
    pub point_channels: [usize; 3],
    /// Hidden state width per LSTM direction.
    pub lstm_hidden: usize,
    /// Stacked bidirectional LSTM layers.
    pub lstm_layers: usize,
    /// Widths of the two hidden regressor layers.
    pub head_dims: [usize; 2],
    /// Dropout rate after the first regressor activation (training only).
    pub head_dropout: f64,
    /// Dropout rate between stacked LSTM layers (training only).
    pub lstm_dropout: f64,
    /// Ablation switch: max-pool over padded rows too instead of excluding
    /// them. Off by default; padding is not data.
    pub pool_include_padding: bool,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    /// Full-scale configuration: 80 slices, capacity 6500, 256-wide
    /// embeddings, two 256-wide bidirectional LSTM layers, 256/64 head.
    fn default() -> Self {
        ModelConfig {
            slice_count: 80,
            max_points: 6500,
            point_channels: [32, 64, 256],
            lstm_hidden: 256,
            lstm_layers: 2,
            head_dims: [256, 64],
            head_dropout: 0.3,
            lstm_dropout: 0.2,
            pool_include_padding: false,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    /// Quarter-width variant for fast experiments and overfitting checks.
    pub fn small() -> Self {
        ModelConfig {
            slice_count: 16,
            max_points: 64,
            point_channels: [8, 16, 64],
            lstm_hidden: 64,
            head_dims: [64, 16],
            ..ModelConfig::default()
        }
    }

    /// Minimal configuration sized for finite-difference gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            slice_count: 4,
            max_points: 8,
            point_channels: [4, 8, 16],
            lstm_hidden: 8,
            head_dims: [16, 8],
            init_seed: 7,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::InvalidParameter { name, message: "must be at least 1".into() });
            }
            Ok(())
        }
        positive("slice_count", self.slice_count)?;
        positive("max_points", self.max_points)?;
        positive("lstm_hidden", self.lstm_hidden)?;
        positive("lstm_layers", self.lstm_layers)?;
        for (i, &c) in self.point_channels.iter().enumerate() {
            if c == 0 {
                return Err(Error::InvalidParameter {
                    name: "point_channels",
                    message: format!("stage {i} has zero width"),
                });
            }
        }
        for (i, &d) in self.head_dims.iter().enumerate() {
            if d == 0 {
                return Err(Error::InvalidParameter {
                    name: "head_dims",
                    message: format!("layer {i} has zero width"),
                });
            }
        }
        for (name, rate) in [("head_dropout", self.head_dropout), ("lstm_dropout", self.lstm_dropout)]
        {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("{rate} outside [0, 1)"),
                });
            }
        }
        Ok(())
    }

    /// Canonical parameter layout: names, shapes, and per-section uniform
    /// init bounds, in the order used everywhere (init, optimizer state,
    /// checkpoints).
    pub fn sections(&self) -> Vec<SectionSpec> {
        let [c1, c2, c3] = self.point_channels;
        let h = self.lstm_hidden;
        let [d1, d2] = self.head_dims;
        let mut out = Vec::new();

        let affine = |name: &str, out_dim: usize, in_dim: usize, list: &mut Vec<SectionSpec>| {
            let bound = 1.0 / (in_dim as f64).sqrt();
            list.push(SectionSpec {
                name: format!("{name}.weight"),
                shape: vec![out_dim, in_dim],
                init_bound: bound,
            });
            list.push(SectionSpec { name: format!("{name}.bias"), shape: vec![out_dim], init_bound: bound });
        };

        affine("pointnet.conv1", c1, POINT_FEATURES, &mut out);
        affine("pointnet.conv2", c2, c1, &mut out);
        affine("pointnet.conv3", c3, c2, &mut out);

        let lstm_bound = 1.0 / (h as f64).sqrt();
        for layer in 1..=self.lstm_layers {
            let in_dim = if layer == 1 { c3 } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                let prefix = format!("lstm.l{layer}.{dir}");
                out.push(SectionSpec {
                    name: format!("{prefix}.w_ih"),
                    shape: vec![LSTM_GATES * h, in_dim],
                    init_bound: lstm_bound,
                });
                out.push(SectionSpec {
                    name: format!("{prefix}.w_hh"),
                    shape: vec![LSTM_GATES * h, h],
                    init_bound: lstm_bound,
                });
                out.push(SectionSpec {
                    name: format!("{prefix}.b_ih"),
                    shape: vec![LSTM_GATES * h],
                    init_bound: lstm_bound,
                });
                out.push(SectionSpec {
                    name: format!("{prefix}.b_hh"),
                    shape: vec![LSTM_GATES * h],
                    init_bound: lstm_bound,
                });
            }
        }

        affine("regressor.fc1", d1, 2 * h, &mut out);
        affine("regressor.fc2", d2, d1, &mut out);
        affine("regressor.fc3", 1, d2, &mut out);
        out
    }

    /// Total trainable parameters.
    pub fn parameter_count(&self) -> usize {
        self.sections().iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Half-width of the uniform init interval.
    pub init_bound: f64,
}

impl SectionSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSection<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// All model parameters, in canonical section order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    sections: Vec<ParamSection<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Draws every section from `U[-bound, bound]` with a stream seeded by
    /// `config.init_seed`. Sections are filled in canonical order, values in
    /// index order, so a given seed and config always produce the same
    /// parameters.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let sections = config
            .sections()
            .into_iter()
            .map(|spec| {
                let values = (0..spec.len())
                    .map(|_| T::from_f64(rng.gen_range(-spec.init_bound..=spec.init_bound)))
                    .collect();
                ParamSection { name: spec.name, shape: spec.shape, values }
            })
            .collect();
        Ok(ModelParams { config: config.clone(), sections })
    }

    /// Builds params from raw sections, checking them against the canonical
    /// layout for the config.
    pub fn from_sections(config: ModelConfig, sections: Vec<ParamSection<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.sections();
        if specs.len() != sections.len() {
            return Err(Error::ConfigMismatch {
                expected: format!("{} parameter sections", specs.len()),
                found: format!("{} parameter sections", sections.len()),
            });
        }
        for (spec, sec) in specs.iter().zip(&sections) {
            if spec.name != sec.name || spec.shape != sec.shape {
                return Err(Error::ConfigMismatch {
                    expected: format!("section {:?} with shape {:?}", spec.name, spec.shape),
                    found: format!("section {:?} with shape {:?}", sec.name, sec.shape),
                });
            }
            if sec.values.len() != spec.len() {
                return Err(Error::ShapeMismatch {
                    op: "parameter section",
                    left: vec![sec.values.len()],
                    right: spec.shape.clone(),
                });
            }
        }
        Ok(ModelParams { config, sections })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sections(&self) -> &[ParamSection<T>] {
        &self.sections
    }

    /// Mutable access for optimizer updates. Shapes are fixed; only values
    /// may change.
    pub fn sections_mut(&mut self) -> &mut [ParamSection<T>] {
        &mut self.sections
    }

    pub fn section(&self, name: &str) -> Option<&ParamSection<T>> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.sections.iter().map(|s| s.values.len()).sum()
    }

    /// Converts every value to another precision, keeping names and shapes.
    pub fn convert<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            sections: self
                .sections
                .iter()
                .map(|s| ParamSection {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    values: s.values.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests;
