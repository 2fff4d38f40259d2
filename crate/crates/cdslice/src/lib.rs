//! Drag-coefficient surrogate modeling for car-like point clouds.
//!
//! The pipeline: a 3D point cloud is cut into a fixed number of cross-section
//! bins along the driving axis; each bin's (y, z) points are encoded by a
//! shared per-point network with masked max pooling; the resulting embedding
//! sequence runs front-to-rear and rear-to-front through a two-layer
//! bidirectional LSTM; a small regression head maps the final states to a
//! single drag coefficient. Training, evaluation, reporting, and a synthetic
//! data generator round out the toolkit. Everything runs on a from-scratch
//! reverse-mode tape (see [`autodiff`]) in either `f32` or `f64`.

pub(crate) mod bytes;

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
