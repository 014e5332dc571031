//! Learning which camera to put on air from multi-view feature streams,
//! including views that were never recorded.
//!
//! The crate covers the whole training flow: loading multi-view records,
//! foreground heatmap features, a random forest selector, random survival
//! forest imputation of missing views (with nearest-neighbour and mean
//! baselines), verification of imputed samples, temporal smoothing of
//! selections and a cross-validation harness. A synthetic generator with
//! known ground truth drives the tests.

pub mod error;
pub mod eval;
pub mod forest;
pub mod heatmap;
pub mod impute;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
pub use forest::{train_forest, Classifier, Forest, ForestConfig};
pub use model::{CameraId, Dataset, DatasetConfig, FeatureBlock, FeatureMatrix, MultiViewSample};
pub use par::Exec;
