//! Robust classifier training under label noise.
//!
//! The crate trains small dense networks on datasets whose labels have been
//! corrupted, and filters training batches down to examples that an ensemble
//! of perturbed networks agrees are clean. Three perturbation families are
//! provided: independent networks (LNEC), stochastic forward passes of one
//! network (LSEC), and the same network at preceding epochs (LTEC), plus a
//! full-batch LTEC variant, self-training, co-teaching, and an unfiltered
//! baseline.
//!
//! The pieces compose bottom-up:
//!
//! - [`model`]: a dense multiclass classifier with per-example losses and an
//!   Adam step.
//! - [`dataset`]: IDX image loading, a synthetic Gaussian-cluster generator,
//!   and stratified splits.
//! - [`noise`]: symmetric / asymmetric / open-set / semantic label corruption
//!   with ground-truth noisy flags.
//! - [`filtering`]: small-loss selection, consensus intersection, and the
//!   temporal pool.
//! - [`trainer`]: the seven training procedures emitting per-epoch metrics.
//! - [`metrics`]: test accuracy, label precision, recall, and run aggregation.
//!
//! Batch-level math runs on rayon when the `parallel` feature (default) is
//! enabled; every parallel loop writes disjoint outputs with fixed-order
//! inner sums, so sequential and parallel builds produce bit-identical
//! results.

pub mod dataset;
pub mod error;
pub mod exec;
pub mod filtering;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod rng;
pub mod trainer;

pub use dataset::{ExampleId, LabeledDataset, SplitSpec};
pub use error::{Error, Result};
pub use exec::Exec;
pub use filtering::{EnsembleSize, SelectionScope, SelectionSet, TemporalPool};
pub use matrix::Matrix;
pub use metrics::EpochMetrics;
pub use model::{ForwardMode, LossVector, ModelState};
pub use noise::{CorruptionMatrix, NoiseKind, NoiseSpec};
pub use trainer::{Method, RunLog, TrainConfig, TrainSeeds};
