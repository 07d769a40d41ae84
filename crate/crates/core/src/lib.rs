//! Land-cover segmentation for a single multiband scene on a laptop.
//!
//! Labelled polygons are rasterized onto the scene grid and sampled into
//! per-pixel training sets. Three classifiers share one prediction and
//! evaluation path: a random forest ([`forest`]), a one-vs-one linear SVM
//! ([`svm`]) and a small patch U-Net ([`unet`]) with hand-written forward
//! and backward passes. Results are scored as per-class precision, recall
//! and F1 ([`metrics`]).
//!
//! | module | contents |
//! |---|---|
//! | [`raster`] | band-stack I/O, geotransforms, class schemas, PNG class maps |
//! | [`labels`] | GeoJSON polygons, rasterization, stratified sampling, splits |
//! | [`classify`] | per-pixel prediction over a raster |
//! | [`synth`] | synthetic scenes with known truth |
//! | [`model_io`] | versioned JSON model files |
//! | [`pipeline`] | config-driven commands with hashed manifests |
//!
//! Runnable examples live in `examples/`: `raster_io`, `label_sampling`,
//! `random_forest`, `linear_svm`, `unet_training`, `accuracy_report`,
//! `synthetic_scene`, `pipeline_run` and `texture_gap`.

pub mod error;
pub mod labels;
pub mod raster;
pub mod rng;

pub use error::{Error, Result};
pub mod classify;
pub mod forest;
pub mod svm;
pub mod unet;
pub mod metrics;
pub mod synth;
pub mod model_io;
pub mod pipeline;
