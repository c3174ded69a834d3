//! Co-teaching baseline: two networks exchange small-loss sets.
//!
//! Each update, network A trains on B's small-loss selection and vice
//! versa. The keep ratio anneals linearly from 100% to `(100-eps)%` over
//! the first 10 epochs; there is no separate warm-up phase.

use std::collections::BTreeSet;

use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::filtering::{small_loss_select, SelectionScope};
use crate::trainer::common::{RunContext, RunRecorder};
use crate::trainer::{Method, RunLog, TrainConfig};

/// Epochs over which the keep ratio anneals down to `(100-eps)%`.
const ANNEAL_EPOCHS: u64 = 10;

/// Effective drop ratio at epoch `t` (1-based): `eps * min(t, 10) / 10`.
pub(crate) fn effective_ratio(assumed_ratio: f64, epoch: u64) -> f64 {
    assumed_ratio * epoch.min(ANNEAL_EPOCHS) as f64 / ANNEAL_EPOCHS as f64
}

pub(crate) fn run(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    let ctx = RunContext::new(train, test, cfg);
    let mut recorder = RunRecorder::new(&ctx);
    let mut model_a = ctx.init_model(0)?;
    let mut model_b = ctx.init_model(1)?;

    for epoch in 1..=cfg.total_epochs {
        let drop_ratio = effective_ratio(cfg.assumed_ratio, epoch);
        let order = ctx.shuffled_rows(epoch);
        let mut used_a = BTreeSet::new();
        let mut used_b = BTreeSet::new();
        let mut skipped = 0u64;

        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = ctx.gather_rows(rows);
            let losses_a = ctx.batch_losses(&model_a, &batch)?;
            let losses_b = ctx.batch_losses(&model_b, &batch)?;
            let select_a =
                small_loss_select(&losses_a, &batch.ids, drop_ratio, SelectionScope::MiniBatch, epoch)?;
            let select_b =
                small_loss_select(&losses_b, &batch.ids, drop_ratio, SelectionScope::MiniBatch, epoch)?;

            // Cross-update: each network learns from its peer's selection.
            if select_b.is_empty() {
                skipped += 1;
            } else {
                let sub = ctx.gather_ids(select_b.ids());
                model_a.sgd_step(
                    &sub.features,
                    &sub.labels,
                    cfg.learning_rate,
                    ctx.update_mode(0, epoch, b as u64),
                )?;
                used_a.extend(select_b.ids().iter().copied());
            }
            if select_a.is_empty() {
                skipped += 1;
            } else {
                let sub = ctx.gather_ids(select_a.ids());
                model_b.sgd_step(
                    &sub.features,
                    &sub.labels,
                    cfg.learning_rate,
                    ctx.update_mode(1, epoch, b as u64),
                )?;
                used_b.extend(select_a.ids().iter().copied());
            }
        }
        recorder.record_epoch(epoch, &[&model_a, &model_b], &[used_a, used_b], skipped)?;
    }
    Ok(recorder.finish(Method::CoTeaching))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_ratio_anneals_linearly() {
        // keep = 100 - drop; epoch 5 at eps 60 keeps 70%.
        assert_eq!(100.0 - effective_ratio(60.0, 5), 70.0);
        assert_eq!(100.0 - effective_ratio(60.0, 10), 40.0);
        assert_eq!(100.0 - effective_ratio(60.0, 50), 40.0);
        assert_eq!(100.0 - effective_ratio(0.0, 3), 100.0);
    }
}
