//! Evaluation: test accuracy, label precision, recall, and run aggregation.
//!
//! Label precision is the fraction of examples used for training that are
//! truly clean; recall is the fraction of all clean training examples that
//! were used. Both count ids once per epoch regardless of how many batches
//! an id appeared in.

use std::collections::HashSet;

use crate::dataset::{ExampleId, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ForwardMode, ModelState};
use crate::trainer::RunLog;

/// Rows evaluated per forward chunk when scoring a test set.
const EVAL_CHUNK: usize = 512;

/// One epoch's record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch index.
    pub epoch: u64,
    pub test_accuracy: f64,
    /// `None` when no examples were used this epoch (all updates skipped);
    /// deliberately distinct from `0.0`.
    pub label_precision: Option<f64>,
    pub recall: f64,
    /// Unique examples updated this epoch; fractional for multi-network
    /// methods, which report the mean over networks.
    pub examples_used: f64,
    pub skipped_updates: u64,
}

fn check_known(used: &[ExampleId], dataset: &LabeledDataset) -> Result<()> {
    let known: HashSet<ExampleId> = dataset.ids().iter().copied().collect();
    if let Some(bad) = used.iter().find(|id| !known.contains(id)) {
        return Err(Error::UnknownId(bad.0));
    }
    Ok(())
}

/// Fraction of used examples that are clean; `None` for an empty `used`.
pub fn label_precision(used: &[ExampleId], dataset: &LabeledDataset) -> Result<Option<f64>> {
    check_known(used, dataset)?;
    if used.is_empty() {
        return Ok(None);
    }
    let index = dataset.id_index();
    let clean = used
        .iter()
        .filter(|id| !dataset.is_noisy(index[id]))
        .count();
    Ok(Some(clean as f64 / used.len() as f64))
}

/// Fraction of all clean examples that were used.
pub fn recall(used: &[ExampleId], dataset: &LabeledDataset) -> Result<f64> {
    check_known(used, dataset)?;
    let total_clean = dataset.clean_count();
    if total_clean == 0 {
        return Ok(0.0);
    }
    let index = dataset.id_index();
    let clean_used = used
        .iter()
        .filter(|id| !dataset.is_noisy(index[id]))
        .count();
    Ok(clean_used as f64 / total_clean as f64)
}

/// Fraction of test examples whose argmax prediction matches the true
/// label. Argmax ties break toward the lowest class index; the forward pass
/// is deterministic.
pub fn test_accuracy(model: &ModelState, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidParam("empty test set".into()));
    }
    let mut correct = 0usize;
    let n = test.len();
    let dim = test.dim();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let rows: Vec<Vec<f64>> = (start..end).map(|i| test.feature_row(i).to_vec()).collect();
        let chunk = Matrix::from_rows(&rows)?;
        debug_assert_eq!(chunk.cols(), dim);
        let probs = model.forward(&chunk, ForwardMode::Deterministic)?;
        for (k, i) in (start..end).enumerate() {
            let row = probs.row(k);
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            if best == test.truth()[i] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

/// Mean and stddev of final and peak accuracy across repeated runs, plus
/// per-epoch mean curves.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub runs: usize,
    pub epochs: usize,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub peak_acc_mean: f64,
    pub peak_acc_std: f64,
    pub final_recall_mean: f64,
    /// Mean over runs whose final precision was defined; `None` if none was.
    pub final_precision_mean: Option<f64>,
    pub epoch_acc_mean: Vec<f64>,
    pub epoch_acc_std: Vec<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1); zero for a single value.
fn stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Aggregate repeated runs of one method. All runs must have the same
/// number of epochs.
pub fn aggregate(runs: &[RunLog]) -> Result<RunSummary> {
    let Some(first) = runs.first() else {
        return Err(Error::InvalidParam("aggregate over zero runs".into()));
    };
    let epochs = first.epochs.len();
    if let Some(bad) = runs.iter().find(|r| r.epochs.len() != epochs) {
        return Err(Error::UnequalEpochCounts(epochs, bad.epochs.len()));
    }
    let finals: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
    let peaks: Vec<f64> = runs.iter().map(|r| r.peak_accuracy).collect();
    let recalls: Vec<f64> = runs
        .iter()
        .map(|r| r.epochs.last().map_or(0.0, |e| e.recall))
        .collect();
    let precisions: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.epochs.last().and_then(|e| e.label_precision))
        .collect();
    let mut epoch_acc_mean = Vec::with_capacity(epochs);
    let mut epoch_acc_std = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let accs: Vec<f64> = runs.iter().map(|r| r.epochs[e].test_accuracy).collect();
        epoch_acc_mean.push(mean(&accs));
        epoch_acc_std.push(stddev(&accs));
    }
    Ok(RunSummary {
        runs: runs.len(),
        epochs,
        final_acc_mean: mean(&finals),
        final_acc_std: stddev(&finals),
        peak_acc_mean: mean(&peaks),
        peak_acc_std: stddev(&peaks),
        final_recall_mean: mean(&recalls),
        final_precision_mean: if precisions.is_empty() {
            None
        } else {
            Some(mean(&precisions))
        },
        epoch_acc_mean,
        epoch_acc_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::trainer::Method;

    fn dataset_with_noise() -> LabeledDataset {
        let mut d = crate::dataset::synth_clusters(2, 5, 2, 0.1, 0).unwrap();
        // flag ids 0 and 1 noisy
        d.corrupt_label(0, 1);
        d.corrupt_label(1, 1);
        d
    }

    #[test]
    fn precision_counts_clean_fraction() {
        let d = dataset_with_noise();
        let used: Vec<ExampleId> = [0u64, 2, 3, 4].iter().map(|&v| ExampleId(v)).collect();
        let p = label_precision(&used, &d).unwrap().unwrap();
        assert_eq!(p, 0.75);
    }

    #[test]
    fn precision_of_empty_is_undefined_not_zero() {
        let d = dataset_with_noise();
        assert_eq!(label_precision(&[], &d).unwrap(), None);
    }

    #[test]
    fn precision_rejects_unknown_id() {
        let d = dataset_with_noise();
        assert!(matches!(
            label_precision(&[ExampleId(99)], &d),
            Err(Error::UnknownId(99))
        ));
    }

    #[test]
    fn recall_over_all_clean_is_one() {
        let d = dataset_with_noise();
        let used: Vec<ExampleId> = d
            .ids()
            .iter()
            .enumerate()
            .filter(|(i, _)| !d.is_noisy(*i))
            .map(|(_, &id)| id)
            .collect();
        assert_eq!(recall(&used, &d).unwrap(), 1.0);
        assert_eq!(recall(&[], &d).unwrap(), 0.0);
    }

    #[test]
    fn counts_are_exact_integers() {
        let d = dataset_with_noise();
        let used: Vec<ExampleId> = [1u64, 3, 5, 7, 9].iter().map(|&v| ExampleId(v)).collect();
        let p = label_precision(&used, &d).unwrap().unwrap();
        let r = recall(&used, &d).unwrap();
        assert_eq!((p * used.len() as f64).round(), p * used.len() as f64);
        assert_eq!(
            (r * d.clean_count() as f64).round(),
            r * d.clean_count() as f64
        );
    }

    #[test]
    fn uniform_model_scores_chance() {
        let d = crate::dataset::synth_clusters(4, 25, 4, 0.5, 3).unwrap();
        let mut model = ModelState::init(ModelConfig::new(4, vec![], 4, 0.0).unwrap(), 0);
        for l in model.layers_mut() {
            l.weights.data_mut().fill(0.0);
        }
        // Uniform output ties at every class; ties resolve to class 0, so
        // accuracy equals class 0's share.
        let acc = test_accuracy(&model, &d).unwrap();
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn accuracy_matches_per_example_loop() {
        let d = crate::dataset::synth_clusters(3, 20, 4, 0.8, 5).unwrap();
        let model = ModelState::init(ModelConfig::new(4, vec![8], 3, 0.0).unwrap(), 9);
        let fast = test_accuracy(&model, &d).unwrap();
        let mut correct = 0;
        for i in 0..d.len() {
            let x = Matrix::from_rows(&[d.feature_row(i).to_vec()]).unwrap();
            let p = model.forward(&x, ForwardMode::Deterministic).unwrap();
            let row = p.row(0);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == d.truth()[i] {
                correct += 1;
            }
        }
        assert_eq!(fast, correct as f64 / d.len() as f64);
    }

    fn fake_run(accs: &[f64]) -> RunLog {
        RunLog {
            method: Method::Standard,
            epochs: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| EpochMetrics {
                    epoch: i as u64 + 1,
                    test_accuracy: a,
                    label_precision: Some(1.0),
                    recall: 1.0,
                    examples_used: 10.0,
                    skipped_updates: 0,
                })
                .collect(),
            final_accuracy: *accs.last().unwrap(),
            peak_accuracy: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            warnings: Vec::new(),
            filter_diag: Vec::new(),
        }
    }

    #[test]
    fn aggregate_single_run_has_zero_std() {
        let s = aggregate(&[fake_run(&[0.5, 0.8])]).unwrap();
        assert_eq!(s.final_acc_mean, 0.8);
        assert_eq!(s.final_acc_std, 0.0);
        assert!(s.peak_acc_mean >= s.final_acc_mean);
    }

    #[test]
    fn aggregate_uses_sample_stddev() {
        let s = aggregate(&[fake_run(&[0.1, 0.8]), fake_run(&[0.1, 0.9])]).unwrap();
        assert!((s.final_acc_mean - 0.85).abs() < 1e-12);
        // sample stddev of {0.8, 0.9}
        assert!((s.final_acc_std - 0.07071067811865475).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a = fake_run(&[0.2, 0.6]);
        let b = fake_run(&[0.3, 0.7]);
        let s1 = aggregate(&[a.clone(), b.clone()]).unwrap();
        let s2 = aggregate(&[b, a]).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn aggregate_rejects_ragged_runs() {
        assert!(matches!(
            aggregate(&[fake_run(&[0.1]), fake_run(&[0.1, 0.2])]),
            Err(Error::UnequalEpochCounts(1, 2))
        ));
    }
}
