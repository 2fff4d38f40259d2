//! Run configuration: one flat bag of knobs resolved from three layers with
//! increasing precedence — built-in defaults, then a JSON config file, then
//! command-line flags. Every command resolves its configuration completely
//! before touching any input, and archives the resolved result next to its
//! outputs so a run can be reproduced from its artifacts alone.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cdslice::error::{Error, Result};
use cdslice::geometry::{Normalization, OverflowPolicy, SliceConfig};
use cdslice::model::ModelConfig;
use cdslice::training::TrainConfig;
use cdslice::dataio::SpecRanges;
use serde::{Deserialize, Serialize};

/// Scalar width the numeric pipeline runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Per-slice point capacity: either a fixed number or "auto", which scans
/// the dataset for the largest observed bin occupancy. Commands resolve
/// `Auto` to a concrete number before running (and before archiving).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxPoints {
    Auto,
    Fixed(usize),
}

impl MaxPoints {
    pub fn fixed(self) -> Option<usize> {
        match self {
            MaxPoints::Auto => None,
            MaxPoints::Fixed(n) => Some(n),
        }
    }
}

impl fmt::Display for MaxPoints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxPoints::Auto => f.write_str("auto"),
            MaxPoints::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for MaxPoints {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(MaxPoints::Auto);
        }
        s.parse::<usize>()
            .map(MaxPoints::Fixed)
            .map_err(|_| format!("expected a point capacity or \"auto\", got {s:?}"))
    }
}

impl Serialize for MaxPoints {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MaxPoints::Auto => ser.serialize_str("auto"),
            MaxPoints::Fixed(n) => ser.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for MaxPoints {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = MaxPoints;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a point capacity (non-negative integer) or the string \"auto\"")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<MaxPoints, E> {
                usize::try_from(v)
                    .map(MaxPoints::Fixed)
                    .map_err(|_| E::custom("point capacity does not fit in usize"))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<MaxPoints, E> {
                usize::try_from(v)
                    .map(MaxPoints::Fixed)
                    .map_err(|_| E::custom("point capacity must be non-negative"))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<MaxPoints, E> {
                v.parse().map_err(E::custom)
            }
        }
        de.deserialize_any(V)
    }
}

/// The fully resolved configuration a command runs under. Field order is the
/// archive order in `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    // Slicing.
    pub slice_count: usize,
    pub max_points: MaxPoints,
    pub overflow: OverflowPolicy,
    pub normalization: Normalization,
    // Model dimensions.
    pub point_channels: [usize; 3],
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub head_dims: [usize; 2],
    pub head_dropout: f64,
    pub lstm_dropout: f64,
    pub pool_include_padding: bool,
    pub init_seed: u64,
    // Optimization.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub huber_beta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub grad_clip: Option<f64>,
    // Run-level knobs.
    pub seed: u64,
    pub precision: Precision,
    pub threads: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    // Synthetic-data generation.
    pub synth: SpecRanges,
    // Reporting.
    pub histogram_bin_width: f64,
    // Gradient-check harness.
    pub gc_epsilon: f64,
    pub gc_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            slice_count: model.slice_count,
            max_points: MaxPoints::Fixed(model.max_points),
            overflow: OverflowPolicy::Strict,
            normalization: Normalization::PerCarCenterScale,
            point_channels: model.point_channels,
            lstm_hidden: model.lstm_hidden,
            lstm_layers: model.lstm_layers,
            head_dims: model.head_dims,
            head_dropout: model.head_dropout,
            lstm_dropout: model.lstm_dropout,
            pool_include_padding: model.pool_include_padding,
            init_seed: model.init_seed,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            huber_beta: train.huber_beta,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_epsilon: train.adam_epsilon,
            grad_clip: train.grad_clip,
            seed: train.seed,
            precision: Precision::F32,
            threads: None,
            cache_dir: None,
            synth: SpecRanges::default(),
            histogram_bin_width: 0.005,
            gc_epsilon: 1e-5,
            gc_tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    /// Slicing parameters. Callers must have resolved `max_points` first.
    pub fn slice_config(&self) -> SliceConfig {
        SliceConfig {
            slice_count: self.slice_count,
            max_points: self.resolved_max_points(),
            overflow: self.overflow,
            normalization: self.normalization,
        }
    }

    /// Model dimensions. Callers must have resolved `max_points` first.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            slice_count: self.slice_count,
            max_points: self.resolved_max_points(),
            point_channels: self.point_channels,
            lstm_hidden: self.lstm_hidden,
            lstm_layers: self.lstm_layers,
            head_dims: self.head_dims,
            head_dropout: self.head_dropout,
            lstm_dropout: self.lstm_dropout,
            pool_include_padding: self.pool_include_padding,
            init_seed: self.init_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            huber_beta: self.huber_beta,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            grad_clip: self.grad_clip,
            seed: self.seed,
        }
    }

    /// Replaces the given model dimensions wholesale (used when a checkpoint
    /// or a built-in preset, not the config layers, owns the architecture).
    pub fn adopt_model_dims(&mut self, model: &ModelConfig) {
        self.slice_count = model.slice_count;
        self.max_points = MaxPoints::Fixed(model.max_points);
        self.point_channels = model.point_channels;
        self.lstm_hidden = model.lstm_hidden;
        self.lstm_layers = model.lstm_layers;
        self.head_dims = model.head_dims;
        self.head_dropout = model.head_dropout;
        self.lstm_dropout = model.lstm_dropout;
        self.pool_include_padding = model.pool_include_padding;
        self.init_seed = model.init_seed;
    }

    fn resolved_max_points(&self) -> usize {
        match self.max_points {
            MaxPoints::Fixed(n) => n,
            MaxPoints::Auto => {
                unreachable!("max_points must be resolved before building stage configs")
            }
        }
    }

}

/// The config-file layer: every knob optional, unknown keys rejected so a
/// typo cannot silently fall back to a default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub slice_count: Option<usize>,
    pub max_points: Option<MaxPoints>,
    pub overflow: Option<OverflowPolicy>,
    pub normalization: Option<Normalization>,
    pub point_channels: Option<[usize; 3]>,
    pub lstm_hidden: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub head_dims: Option<[usize; 2]>,
    pub head_dropout: Option<f64>,
    pub lstm_dropout: Option<f64>,
    pub pool_include_padding: Option<bool>,
    pub init_seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub huber_beta: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub grad_clip: Option<f64>,
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub threads: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub synth: Option<SpecRanges>,
    pub histogram_bin_width: Option<f64>,
    pub gc_epsilon: Option<f64>,
    pub gc_tolerance: Option<f64>,
}

macro_rules! apply_fields {
    ($file:expr, $run:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $file.$field { $run.$field = v; })+
    };
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    }

    /// Overlays every present field onto `run`.
    pub fn apply(self, run: &mut RunConfig) {
        apply_fields!(
            self, run, slice_count, max_points, overflow, normalization, point_channels,
            lstm_hidden, lstm_layers, head_dims, head_dropout, lstm_dropout,
            pool_include_padding, init_seed, learning_rate, batch_size, epochs, huber_beta,
            adam_beta1, adam_beta2, adam_epsilon, seed, precision, histogram_bin_width,
            gc_epsilon, gc_tolerance,
        );
        // Option-typed knobs: a present key turns the feature on; omitting it
        // keeps the default. (JSON null is indistinguishable from absent.)
        if self.grad_clip.is_some() {
            run.grad_clip = self.grad_clip;
        }
        if self.threads.is_some() {
            run.threads = self.threads;
        }
        if self.cache_dir.is_some() {
            run.cache_dir = self.cache_dir;
        }
        if let Some(s) = self.synth {
            run.synth = s;
        }
    }
}

/// Flag-layer overrides shared by every subcommand. Subcommand-specific
/// flags land in the same struct so precedence stays in one place.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub precision: Option<Precision>,
    pub slice_count: Option<usize>,
    pub max_points: Option<MaxPoints>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub grad_clip: Option<f64>,
    pub points_per_body: Option<usize>,
    pub histogram_bin_width: Option<f64>,
}

/// Builds the fully layered configuration: defaults, then the config file
/// (if any), then flags. `precision_default` lets a command pick its own
/// scalar width when neither file nor flag chose one.
pub fn resolve(
    config_file: Option<&Path>,
    overrides: &Overrides,
    precision_default: Precision,
) -> Result<RunConfig> {
    let base = RunConfig { precision: precision_default, ..RunConfig::default() };
    resolve_from(base, config_file, overrides)
}

/// Same layering on top of a caller-chosen base — for commands whose
/// defaults differ from the pipeline defaults (the gradient checker starts
/// from the minimal architecture).
pub fn resolve_from(
    base: RunConfig,
    config_file: Option<&Path>,
    overrides: &Overrides,
) -> Result<RunConfig> {
    let mut run = base;
    if let Some(path) = config_file {
        FileConfig::load(path)?.apply(&mut run);
    }
    let o = *overrides;
    apply_fields!(
        o, run, seed, precision, slice_count, max_points, epochs, learning_rate, batch_size,
    );
    if o.threads.is_some() {
        run.threads = o.threads;
    }
    if o.grad_clip.is_some() {
        run.grad_clip = o.grad_clip;
    }
    if let Some(p) = o.points_per_body {
        run.synth.points = p;
    }
    if let Some(b) = o.histogram_bin_width {
        run.histogram_bin_width = b;
    }
    Ok(run)
}

/// Archives the resolved configuration as `<command>_config.json` in
/// `out_dir`, together with the command name and its input paths. The name
/// is per-command so runs that share an output directory (train, then eval
/// into the same place) never destroy each other's provenance.
/// Deterministic bytes: no timestamps, stable field order.
pub fn archive(out_dir: &Path, command: &str, config: &RunConfig, inputs: &[(&str, String)]) -> Result<()> {
    debug_assert!(
        config.max_points.fixed().is_some(),
        "archive requires a fully resolved configuration"
    );
    #[derive(Serialize)]
    struct Archive<'a> {
        command: &'a str,
        inputs: std::collections::BTreeMap<&'a str, &'a str>,
        config: &'a RunConfig,
    }
    let record = Archive {
        command,
        inputs: inputs.iter().map(|(k, v)| (*k, v.as_str())).collect(),
        config,
    };
    let path = out_dir.join(format!("{command}_config.json"));
    let mut text = serde_json::to_string_pretty(&record).expect("config serialization is infallible");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
