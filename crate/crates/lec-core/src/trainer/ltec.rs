//! Temporal-ensemble consensus trainers.
//!
//! Both variants keep a pool of previous epochs' selections instead of
//! previous parameters. The mini-batch variant accumulates each epoch's
//! pool entry as the union of per-batch small-loss sets and filters every
//! batch against the pooled history. The full-batch variant selects over
//! the whole train set once per epoch (from epoch 2, for stability) and
//! trains on fixed-size mini-batches drawn from the intersection.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::dataset::{ExampleId, LabeledDataset};
use crate::error::Result;
use crate::filtering::{small_loss_select, temporal_consensus, SelectionScope, SelectionSet, TemporalPool};
use crate::rng::{self, tag};
use crate::trainer::common::{MeanAccum, RunContext, RunRecorder};
use crate::trainer::{Method, RunLog, TrainConfig};

pub(crate) fn run_minibatch(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    let ctx = RunContext::new(train, test, cfg);
    let mut recorder = RunRecorder::new(&ctx);
    let mut model = ctx.init_model(0)?;
    let mut pool = TemporalPool::for_ensemble(cfg.ensemble);

    for epoch in 1..=cfg.total_epochs {
        let order = ctx.shuffled_rows(epoch);
        let mut epoch_selection: Vec<ExampleId> = Vec::new();
        let mut used = BTreeSet::new();
        let mut skipped = 0u64;
        let mut diag_current = MeanAccum::new();
        let mut diag_consensus = MeanAccum::new();

        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = ctx.gather_rows(rows);
            let losses = ctx.batch_losses(&model, &batch)?;
            let selection = small_loss_select(
                &losses,
                &batch.ids,
                cfg.assumed_ratio,
                SelectionScope::MiniBatch,
                epoch,
            )?;
            epoch_selection.extend_from_slice(selection.ids());

            if epoch <= cfg.warmup_epochs {
                model.sgd_step(
                    &batch.features,
                    &batch.labels,
                    cfg.learning_rate,
                    ctx.update_mode(0, epoch, b as u64),
                )?;
                used.extend(batch.ids.iter().copied());
                continue;
            }

            let chosen = temporal_consensus(&pool, &selection, cfg.ensemble, epoch)?;
            debug_assert!(chosen.ids().iter().all(|id| selection.contains(*id)));
            diag_current.push(recorder.precision_of(selection.ids()));
            diag_consensus.push(recorder.precision_of(chosen.ids()));
            if chosen.is_empty() {
                skipped += 1;
                continue;
            }
            let sub = ctx.gather_ids(chosen.ids());
            model.sgd_step(
                &sub.features,
                &sub.labels,
                cfg.learning_rate,
                ctx.update_mode(0, epoch, b as u64),
            )?;
            used.extend(chosen.ids().iter().copied());
        }

        if epoch > cfg.warmup_epochs {
            recorder.record_diag(epoch, diag_current.mean(), diag_consensus.mean());
        }
        pool.push(SelectionSet::new(
            epoch_selection,
            SelectionScope::FullBatch,
            epoch,
        ))?;
        recorder.record_epoch(epoch, &[&model], &[used], skipped)?;
    }
    Ok(recorder.finish(Method::Ltec))
}

pub(crate) fn run_full(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    let ctx = RunContext::new(train, test, cfg);
    let mut recorder = RunRecorder::new(&ctx);
    let mut model = ctx.init_model(0)?;
    let mut pool = TemporalPool::for_ensemble(cfg.ensemble);

    // Epoch 1 trains plainly; full-batch selections start at epoch 2.
    let plain_epoch = |model: &mut crate::model::ModelState,
                           epoch: u64|
     -> Result<BTreeSet<ExampleId>> {
        let order = ctx.shuffled_rows(epoch);
        let mut used = BTreeSet::new();
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = ctx.gather_rows(rows);
            model.sgd_step(
                &batch.features,
                &batch.labels,
                cfg.learning_rate,
                ctx.update_mode(0, epoch, b as u64),
            )?;
            used.extend(batch.ids.iter().copied());
        }
        Ok(used)
    };

    let used = plain_epoch(&mut model, 1)?;
    recorder.record_epoch(1, &[&model], &[used], 0)?;

    for epoch in 2..=cfg.total_epochs {
        let losses = ctx.full_losses(&model)?;
        let full_selection = small_loss_select(
            &losses,
            ctx.train.ids(),
            cfg.assumed_ratio,
            SelectionScope::FullBatch,
            epoch,
        )?;

        let (used, skipped) = if epoch <= cfg.warmup_epochs {
            (plain_epoch(&mut model, epoch)?, 0)
        } else {
            let chosen = temporal_consensus(&pool, &full_selection, cfg.ensemble, epoch)?;
            recorder.record_diag(
                epoch,
                recorder.precision_of(full_selection.ids()),
                recorder.precision_of(chosen.ids()),
            );
            if chosen.is_empty() {
                (BTreeSet::new(), 1)
            } else {
                // Fixed-size mini-batches sampled from the intersection.
                let mut ids: Vec<ExampleId> = chosen.ids().to_vec();
                ids.shuffle(&mut rng::stream(
                    cfg.seeds.shuffle,
                    &[tag::FULL_SHUFFLE, epoch],
                ));
                for (b, chunk) in ids.chunks(cfg.batch_size).enumerate() {
                    debug_assert!(
                        chunk.len() == cfg.batch_size || (b + 1) * cfg.batch_size >= ids.len(),
                        "only the last mini-batch may run short"
                    );
                    let sub = ctx.gather_ids(chunk);
                    model.sgd_step(
                        &sub.features,
                        &sub.labels,
                        cfg.learning_rate,
                        ctx.update_mode(0, epoch, b as u64),
                    )?;
                }
                (chosen.ids().iter().copied().collect(), 0)
            }
        };

        pool.push(full_selection)?;
        recorder.record_epoch(epoch, &[&model], &[used], skipped)?;
    }
    Ok(recorder.finish(Method::LtecFull))
}
