//! The seven training procedures.
//!
//! Every trainer consumes a (usually corrupted) train set plus an intact
//! test set and emits per-epoch metrics. All of them share the same
//! epoch/batch scaffolding. The filtering trainers differ only in where
//! their loss ensembles come from:
//!
//! - `Standard`: plain mini-batch training on everything.
//! - `SelfTraining`: consensus of a single member, i.e. train on the
//!   `(100-eps)%` small-loss examples of each batch.
//! - `Lnec`: consensus across M independently initialized networks.
//! - `Lsec`: consensus across M stochastic forward passes of one network.
//! - `Ltec`: consensus of the current batch selection with the pooled
//!   selections of the preceding `min(M-1, t-1)` epochs.
//! - `LtecFull`: like `Ltec` but selections are computed over the full
//!   train set once per epoch, and filtered epochs train on fixed-size
//!   mini-batches sampled from the intersection.
//! - `CoTeaching`: two networks exchange their small-loss sets, with the
//!   keep ratio annealed from 100% down to `(100-eps)%` over the first 10
//!   epochs.
//!
//! Runs are bit-reproducible under fixed seeds: every random choice draws
//! from a stream derived from the config seeds and the loop indices.

mod common;
mod coteaching;
mod lec_minibatch;
mod ltec;
mod standard;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::filtering::EnsembleSize;
use crate::metrics::EpochMetrics;

/// Training procedure selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Standard,
    SelfTraining,
    Lnec,
    Lsec,
    Ltec,
    LtecFull,
    CoTeaching,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Standard,
        Method::SelfTraining,
        Method::Lnec,
        Method::Lsec,
        Method::Ltec,
        Method::LtecFull,
        Method::CoTeaching,
    ];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Standard => "standard",
            Method::SelfTraining => "self",
            Method::Lnec => "lnec",
            Method::Lsec => "lsec",
            Method::Ltec => "ltec",
            Method::LtecFull => "ltec-full",
            Method::CoTeaching => "coteaching",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Method::Standard),
            "self" | "self-training" | "selftraining" => Ok(Method::SelfTraining),
            "lnec" => Ok(Method::Lnec),
            "lsec" => Ok(Method::Lsec),
            "ltec" => Ok(Method::Ltec),
            "ltec-full" | "ltecfull" | "ltec_full" => Ok(Method::LtecFull),
            "coteaching" | "co-teaching" => Ok(Method::CoTeaching),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// Independent seed streams for the three sources of randomness in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSeeds {
    pub model_init: u64,
    pub shuffle: u64,
    pub dropout: u64,
}

impl TrainSeeds {
    pub fn from_base(base: u64) -> Self {
        TrainSeeds {
            model_init: crate::rng::derive(base, &[1]),
            shuffle: crate::rng::derive(base, &[2]),
            dropout: crate::rng::derive(base, &[3]),
        }
    }
}

/// Full configuration of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    /// Warm-up duration in epochs; filtering starts the epoch after.
    pub warmup_epochs: u64,
    pub total_epochs: u64,
    /// Ensemble size M; ignored by `Standard`, forced to 1 by
    /// `SelfTraining`, and `CoTeaching` always uses exactly 2 networks.
    pub ensemble: EnsembleSize,
    /// Assumed noise ratio (percent); may differ from the true ratio.
    pub assumed_ratio: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub seeds: TrainSeeds,
}

impl TrainConfig {
    /// Desk-scale defaults; callers override what they need.
    pub fn with_method(method: Method) -> Self {
        TrainConfig {
            method,
            warmup_epochs: 10,
            total_epochs: 60,
            ensemble: EnsembleSize::Finite(5),
            assumed_ratio: 0.0,
            batch_size: 128,
            learning_rate: 1e-3,
            hidden: vec![128, 128],
            dropout: 0.25,
            seeds: TrainSeeds::from_base(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs < 1 || self.warmup_epochs >= self.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= warmup ({}) < total epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(0.0..100.0).contains(&self.assumed_ratio) {
            return Err(Error::InvalidConfig(format!(
                "assumed noise ratio {} outside [0, 100)",
                self.assumed_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bad learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        self.ensemble.validate()?;
        if matches!(self.method, Method::Lnec | Method::Lsec)
            && self.ensemble.finite().is_none()
        {
            return Err(Error::InvalidConfig(format!(
                "{} needs a finite ensemble size",
                self.method
            )));
        }
        Ok(())
    }
}

/// Per-epoch label precision of the raw small-loss selection vs. the
/// consensus it was filtered down to, averaged over the epoch's updates.
/// Only the temporal trainers record these.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterDiag {
    pub epoch: u64,
    pub current_precision: Option<f64>,
    pub consensus_precision: Option<f64>,
}

/// The full record of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub method: Method,
    pub epochs: Vec<EpochMetrics>,
    /// Last epoch's test accuracy.
    pub final_accuracy: f64,
    /// Best test accuracy over all epochs.
    pub peak_accuracy: f64,
    pub warnings: Vec<String>,
    pub filter_diag: Vec<FilterDiag>,
}

impl RunLog {
    pub fn total_skipped(&self) -> u64 {
        self.epochs.iter().map(|e| e.skipped_updates).sum()
    }
}

/// Train with the configured method and report per-epoch metrics.
pub fn train(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if train.dim() != test.dim() || train.classes() != test.classes() {
        return Err(Error::Shape {
            expected: format!("{}d/{} classes", train.dim(), train.classes()),
            got: format!("{}d/{} classes", test.dim(), test.classes()),
        });
    }
    match cfg.method {
        Method::Standard => standard::run(train, test, cfg),
        Method::SelfTraining | Method::Lnec | Method::Lsec => {
            lec_minibatch::run(train, test, cfg)
        }
        Method::Ltec => ltec::run_minibatch(train, test, cfg),
        Method::LtecFull => ltec::run_full(train, test, cfg),
        Method::CoTeaching => coteaching::run(train, test, cfg),
    }
}
