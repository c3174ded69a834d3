//! Plain mini-batch cross-entropy training on the full corrupted set.

use std::collections::BTreeSet;

use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::trainer::common::{RunContext, RunRecorder};
use crate::trainer::{Method, RunLog, TrainConfig};

pub(crate) fn run(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    let ctx = RunContext::new(train, test, cfg);
    let mut recorder = RunRecorder::new(&ctx);
    let mut model = ctx.init_model(0)?;
    for epoch in 1..=cfg.total_epochs {
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
        recorder.record_epoch(epoch, &[&model], &[used], 0)?;
    }
    Ok(recorder.finish(Method::Standard))
}
