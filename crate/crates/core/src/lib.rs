//! Driving-style recognition with k-means-reduced support vector machines.
//!
//! The pipeline reduces labelled speed/throttle telemetry to per-class
//! k-means centroids, trains a soft-margin Gaussian-kernel SVM on those
//! centroids with an SMO dual solver, and evaluates the result offline
//! (clustered test data) or online (fixed-span sliding windows).
//!
//! Modules:
//! - [`dataset`]: samples, CSV I/O, cross-validation partitions.
//! - [`kmeans`]: Lloyd k-means with k-means++ seeding, per-label reduction.
//! - [`svm`]: RBF kernel, SMO solver, model format.
//! - [`model_selection`]: exponential (C, gamma) grid and cross-validated search.
//! - [`pipeline`]: kMC-SVM training, offline/online evaluation, benchmarking.
//! - [`datagen`]: seeded synthetic driver telemetry.
//! - [`cli`]: the `kmcsvm` command-line front end.
//!
//! Data-parallel loops go through [`par::Execution`]; with the `parallel`
//! feature disabled every strategy runs sequentially and results are
//! bit-identical either way.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datagen;
pub mod dataset;
mod error;
pub mod kmeans;
pub mod model_selection;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod svm;

pub use dataset::{Dataset, Label, Point, Sample, SubsetPartition};
pub use error::{Error, Result};
pub use kmeans::{ClusterSet, KRule};
pub use par::Execution;
pub use pipeline::{BenchReport, EvalReport, WindowConfig};
pub use svm::{Gamma, SvmModel, TrainConfig};
