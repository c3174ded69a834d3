//! The generic mini-batch ensemble-consensus engine.
//!
//! Warm up on everything, then per batch: collect one loss vector per
//! ensemble member, keep each member's `(100-eps)%` small-loss examples,
//! and update on the intersection. The members — the perturbation family —
//! are the only thing the three front-ends disagree on:
//!
//! - self-training: the single network itself (M = 1),
//! - LNEC: M independently initialized networks,
//! - LSEC: M stochastic forward passes of one network.
//!
//! An empty intersection skips the update and is counted, never fatal.

use std::collections::BTreeSet;

use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::filtering::{consensus, small_loss_select, EnsembleSize, SelectionScope};
use crate::model::{LossVector, ModelState};
use crate::trainer::common::{Batch, RunContext, RunRecorder};
use crate::trainer::{Method, RunLog, TrainConfig};

/// Loss vectors of every ensemble member for the current batch; this is
/// the pluggable perturbation of the generic algorithm.
trait LossEnsemble {
    fn member_losses(
        &self,
        ctx: &RunContext<'_>,
        models: &[ModelState],
        batch: &Batch,
        epoch: u64,
        batch_idx: u64,
    ) -> Result<Vec<LossVector>>;
}

/// Each network votes with its own deterministic losses.
struct PerNetwork;

impl LossEnsemble for PerNetwork {
    fn member_losses(
        &self,
        ctx: &RunContext<'_>,
        models: &[ModelState],
        batch: &Batch,
        _epoch: u64,
        _batch_idx: u64,
    ) -> Result<Vec<LossVector>> {
        models.iter().map(|m| ctx.batch_losses(m, batch)).collect()
    }
}

/// One network votes M times through independently seeded dropout passes.
struct StochasticPasses {
    passes: usize,
}

impl LossEnsemble for StochasticPasses {
    fn member_losses(
        &self,
        ctx: &RunContext<'_>,
        models: &[ModelState],
        batch: &Batch,
        epoch: u64,
        batch_idx: u64,
    ) -> Result<Vec<LossVector>> {
        let model = &models[0];
        (0..self.passes as u64)
            .map(|pass| {
                model.per_example_loss(
                    &batch.features,
                    &batch.labels,
                    ctx.pass_mode(epoch, batch_idx, pass),
                )
            })
            .collect()
    }
}

pub(crate) fn run(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    match cfg.method {
        Method::SelfTraining => {
            // LEC with M = 1: the consensus of a single member is itself.
            drive(train, test, cfg, 1, EnsembleSize::Finite(1), &PerNetwork)
        }
        Method::Lnec => {
            let m = cfg.ensemble.finite().expect("validated finite");
            drive(train, test, cfg, m, cfg.ensemble, &PerNetwork)
        }
        Method::Lsec => {
            let m = cfg.ensemble.finite().expect("validated finite");
            drive(train, test, cfg, 1, cfg.ensemble, &StochasticPasses { passes: m })
        }
        other => unreachable!("not a mini-batch LEC method: {other}"),
    }
}

fn drive(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
    n_models: usize,
    ensemble: EnsembleSize,
    perturbation: &dyn LossEnsemble,
) -> Result<RunLog> {
    let ctx = RunContext::new(train, test, cfg);
    let mut recorder = RunRecorder::new(&ctx);
    if cfg.method == Method::Lsec && cfg.dropout == 0.0 && ensemble != EnsembleSize::Finite(1) {
        recorder.warn(
            "dropout is 0: stochastic passes coincide and LSEC reduces to self-training",
        );
    }

    let mut models: Vec<ModelState> = (0..n_models)
        .map(|m| ctx.init_model(m as u64))
        .collect::<Result<_>>()?;

    for epoch in 1..=cfg.total_epochs {
        let order = ctx.shuffled_rows(epoch);
        let mut used: Vec<BTreeSet<_>> = vec![BTreeSet::new(); n_models];
        let mut skipped = 0u64;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = ctx.gather_rows(rows);
            if epoch <= cfg.warmup_epochs {
                for (m, model) in models.iter_mut().enumerate() {
                    model.sgd_step(
                        &batch.features,
                        &batch.labels,
                        cfg.learning_rate,
                        ctx.update_mode(m as u64, epoch, b as u64),
                    )?;
                    used[m].extend(batch.ids.iter().copied());
                }
                continue;
            }

            let losses = perturbation.member_losses(&ctx, &models, &batch, epoch, b as u64)?;
            let sets = losses
                .iter()
                .map(|lv| {
                    small_loss_select(lv, &batch.ids, cfg.assumed_ratio, SelectionScope::MiniBatch, epoch)
                })
                .collect::<Result<Vec<_>>>()?;
            let chosen = consensus(&sets, ensemble)?;
            debug_assert!(chosen.ids().iter().all(|id| sets[0].contains(*id)));
            debug_assert!(chosen.ids().iter().all(|id| batch.ids.contains(id)));
            if chosen.is_empty() {
                skipped += 1;
                continue;
            }
            let sub = ctx.gather_ids(chosen.ids());
            for (m, model) in models.iter_mut().enumerate() {
                model.sgd_step(
                    &sub.features,
                    &sub.labels,
                    cfg.learning_rate,
                    ctx.update_mode(m as u64, epoch, b as u64),
                )?;
                used[m].extend(chosen.ids().iter().copied());
            }
        }
        let model_refs: Vec<&ModelState> = models.iter().collect();
        recorder.record_epoch(epoch, &model_refs, &used, skipped)?;
    }
    Ok(recorder.finish(cfg.method))
}
