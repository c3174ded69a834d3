//! Shared epoch/batch machinery for the trainers.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;

use crate::dataset::{ExampleId, LabeledDataset};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::metrics::{self, EpochMetrics};
use crate::model::{ForwardMode, LossVector, ModelConfig, ModelState};
use crate::rng::{self, tag};
use crate::trainer::{FilterDiag, Method, RunLog, TrainConfig};

/// One gathered mini-batch: features and observed labels aligned with ids.
pub(crate) struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub ids: Vec<ExampleId>,
}

pub(crate) struct RunContext<'a> {
    pub train: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
    pub cfg: &'a TrainConfig,
    /// Row index of every train example id.
    pub index: HashMap<ExampleId, usize>,
}

impl<'a> RunContext<'a> {
    pub fn new(train: &'a LabeledDataset, test: &'a LabeledDataset, cfg: &'a TrainConfig) -> Self {
        RunContext {
            train,
            test,
            cfg,
            index: train.id_index(),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::new(
            self.train.dim(),
            self.cfg.hidden.clone(),
            self.train.classes(),
            self.cfg.dropout,
        )
    }

    /// Fresh model for ensemble slot `m`. Slot 0 is shared by every
    /// single-network method, so M = 1 ensembles reproduce self-training
    /// exactly.
    pub fn init_model(&self, m: u64) -> Result<ModelState> {
        Ok(ModelState::init(
            self.model_config()?,
            rng::derive(self.cfg.seeds.model_init, &[tag::MODEL_INIT, m]),
        ))
    }

    /// Epoch-specific shuffled row order.
    pub fn shuffled_rows(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng::stream(self.cfg.seeds.shuffle, &[tag::SHUFFLE, epoch]));
        order
    }

    pub fn gather_rows(&self, rows: &[usize]) -> Batch {
        let mut features = Matrix::zeros(rows.len(), self.train.dim());
        for (k, &i) in rows.iter().enumerate() {
            features.row_mut(k).copy_from_slice(self.train.feature_row(i));
        }
        Batch {
            features,
            labels: rows.iter().map(|&i| self.train.observed()[i]).collect(),
            ids: rows.iter().map(|&i| self.train.id(i)).collect(),
        }
    }

    pub fn gather_ids(&self, ids: &[ExampleId]) -> Batch {
        let rows: Vec<usize> = ids.iter().map(|id| self.index[id]).collect();
        self.gather_rows(&rows)
    }

    /// Dropout stream for the parameter update of model `m` at (epoch, batch).
    /// Shared across methods so degenerate configurations coincide exactly.
    pub fn update_mode(&self, m: u64, epoch: u64, batch: u64) -> ForwardMode {
        ForwardMode::Stochastic(rng::derive(
            self.cfg.seeds.dropout,
            &[tag::UPDATE_DROPOUT, m, epoch, batch],
        ))
    }

    /// Dropout stream for stochastic selection pass `pass` (LSEC).
    pub fn pass_mode(&self, epoch: u64, batch: u64, pass: u64) -> ForwardMode {
        ForwardMode::Stochastic(rng::derive(
            self.cfg.seeds.dropout,
            &[tag::SELECTION_PASS, epoch, batch, pass],
        ))
    }

    /// Deterministic per-example losses of `model` on `batch`.
    pub fn batch_losses(&self, model: &ModelState, batch: &Batch) -> Result<LossVector> {
        model.per_example_loss(&batch.features, &batch.labels, ForwardMode::Deterministic)
    }

    /// Deterministic per-example losses over the whole train set, evaluated
    /// in fixed-size chunks.
    pub fn full_losses(&self, model: &ModelState) -> Result<LossVector> {
        let mut values = Vec::with_capacity(self.train.len());
        let rows: Vec<usize> = (0..self.train.len()).collect();
        for chunk in rows.chunks(1024) {
            let batch = self.gather_rows(chunk);
            let losses = self.batch_losses(model, &batch)?;
            values.extend_from_slice(losses.values());
        }
        LossVector::new(values)
    }
}

/// Accumulates per-epoch metrics for a run.
pub(crate) struct RunRecorder<'a> {
    ctx: &'a RunContext<'a>,
    noisy_by_id: HashMap<ExampleId, bool>,
    clean_total: usize,
    epochs: Vec<EpochMetrics>,
    diags: Vec<FilterDiag>,
    warnings: Vec<String>,
}

impl<'a> RunRecorder<'a> {
    pub fn new(ctx: &'a RunContext<'a>) -> Self {
        let noisy_by_id = ctx
            .train
            .ids()
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, ctx.train.is_noisy(i)))
            .collect();
        RunRecorder {
            ctx,
            noisy_by_id,
            clean_total: ctx.train.clean_count(),
            epochs: Vec::new(),
            diags: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// Clean fraction of a set of ids; `None` for an empty set.
    pub fn precision_of<'b>(&self, ids: impl IntoIterator<Item = &'b ExampleId>) -> Option<f64> {
        let (mut clean, mut total) = (0usize, 0usize);
        for id in ids {
            total += 1;
            if !self.noisy_by_id[id] {
                clean += 1;
            }
        }
        (total > 0).then(|| clean as f64 / total as f64)
    }

    /// Record epoch metrics averaged over the models, as multi-network
    /// methods report the mean of their members.
    pub fn record_epoch(
        &mut self,
        epoch: u64,
        models: &[&ModelState],
        used: &[BTreeSet<ExampleId>],
        skipped: u64,
    ) -> Result<()> {
        debug_assert_eq!(models.len(), used.len());
        let m = models.len() as f64;
        let mut acc_sum = 0.0;
        for &model in models {
            acc_sum += metrics::test_accuracy(model, self.ctx.test)?;
        }
        let precisions: Vec<f64> = used
            .iter()
            .filter_map(|u| self.precision_of(u.iter()))
            .collect();
        let label_precision = if precisions.is_empty() {
            None
        } else {
            Some(precisions.iter().sum::<f64>() / precisions.len() as f64)
        };
        let recall = used
            .iter()
            .map(|u| {
                let clean_used = u.iter().filter(|id| !self.noisy_by_id[id]).count();
                clean_used as f64 / self.clean_total.max(1) as f64
            })
            .sum::<f64>()
            / m;
        let examples_used = used.iter().map(|u| u.len() as f64).sum::<f64>() / m;
        self.epochs.push(EpochMetrics {
            epoch,
            test_accuracy: acc_sum / m,
            label_precision,
            recall,
            examples_used,
            skipped_updates: skipped,
        });
        Ok(())
    }

    pub fn record_diag(&mut self, epoch: u64, current: Option<f64>, consensus: Option<f64>) {
        self.diags.push(FilterDiag {
            epoch,
            current_precision: current,
            consensus_precision: consensus,
        });
    }

    pub fn finish(self, method: Method) -> RunLog {
        let final_accuracy = self.epochs.last().map_or(0.0, |e| e.test_accuracy);
        let peak_accuracy = self
            .epochs
            .iter()
            .map(|e| e.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        RunLog {
            method,
            epochs: self.epochs,
            final_accuracy,
            peak_accuracy,
            warnings: self.warnings,
            filter_diag: self.diags,
        }
    }
}

/// Mean of the defined values, if any.
pub(crate) struct MeanAccum {
    sum: f64,
    n: u64,
}

impl MeanAccum {
    pub fn new() -> Self {
        MeanAccum { sum: 0.0, n: 0 }
    }

    pub fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}
