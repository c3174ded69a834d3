//! Label and feature corruption with ground-truth noisy flags.
//!
//! Four corruption families: symmetric random relabeling, asymmetric
//! next-class relabeling, open-set feature substitution, and semantic noise
//! that flips the labels of the most ensemble-uncertain examples to their
//! most confusable alternative class. Every family corrupts exactly
//! `floor(ratio * n / 100)` examples and records which ones.

use rand::Rng;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matrix::Matrix;
use crate::model::{ForwardMode, ModelConfig, ModelState};
use crate::rng::{self, tag};

/// Description of a corruption to apply.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Percentage of examples to corrupt, in `[0, 100)`.
    pub ratio: f64,
    pub seed: u64,
    /// Uncertainty-ensemble size for semantic noise.
    pub ensemble: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Sym,
    Asym,
    OpenSet,
    Semantic,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseKind::Sym => "sym",
            NoiseKind::Asym => "asym",
            NoiseKind::OpenSet => "openset",
            NoiseKind::Semantic => "semantic",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sym" => Ok(NoiseKind::Sym),
            "asym" => Ok(NoiseKind::Asym),
            "openset" | "open-set" => Ok(NoiseKind::OpenSet),
            "semantic" => Ok(NoiseKind::Semantic),
            other => Err(Error::InvalidParam(format!("unknown noise kind {other:?}"))),
        }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..100.0).contains(&ratio) {
        return Err(Error::InvalidRatio { ratio });
    }
    Ok(())
}

fn check_clean(data: &LabeledDataset) -> Result<()> {
    if !data.is_clean() {
        return Err(Error::InvalidParam(
            "noise must be applied to a clean dataset".into(),
        ));
    }
    Ok(())
}

/// `floor(ratio * n / 100)`.
fn noisy_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 / 100.0).floor() as usize
}

/// Sorted sample of `k` distinct indices out of `n`.
fn pick_indices(n: usize, k: usize, seed: u64, stream_tag: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, &[stream_tag]);
    let mut picked = rand::seq::index::sample(&mut r, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Symmetric noise: relabel uniformly chosen examples to a uniformly chosen
/// label other than the true one.
pub fn apply_sym(data: &LabeledDataset, ratio: f64, seed: u64) -> Result<LabeledDataset> {
    check_ratio(ratio)?;
    check_clean(data)?;
    if data.classes() < 2 {
        return Err(Error::InvalidParam("need at least 2 classes".into()));
    }
    let mut out = data.clone();
    let chosen = pick_indices(data.len(), noisy_count(ratio, data.len()), seed, tag::NOISE_PICK);
    let mut label_rng = rng::stream(seed, &[tag::NOISE_LABEL]);
    for i in chosen {
        let truth = out.truth()[i];
        let r = label_rng.gen_range(0..out.classes() - 1);
        let label = if r >= truth { r + 1 } else { r };
        out.corrupt_label(i, label);
    }
    Ok(out)
}

/// Asymmetric noise: relabel uniformly chosen examples from class `i` to
/// class `(i + 1) mod C`.
pub fn apply_asym(data: &LabeledDataset, ratio: f64, seed: u64) -> Result<LabeledDataset> {
    check_ratio(ratio)?;
    check_clean(data)?;
    if data.classes() < 2 {
        return Err(Error::InvalidParam("need at least 2 classes".into()));
    }
    let mut out = data.clone();
    let chosen = pick_indices(data.len(), noisy_count(ratio, data.len()), seed, tag::NOISE_PICK);
    for i in chosen {
        let label = (out.truth()[i] + 1) % out.classes();
        out.corrupt_label(i, label);
    }
    Ok(out)
}

/// Open-set noise: replace the features of uniformly chosen examples with
/// distinct rows drawn without replacement from `source`; labels stay
/// intact but the examples are flagged noisy.
pub fn apply_openset(
    data: &LabeledDataset,
    source: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    check_ratio(ratio)?;
    check_clean(data)?;
    if source.dim() != data.dim() {
        return Err(Error::Shape {
            expected: format!("source feature dimension {}", data.dim()),
            got: format!("{}", source.dim()),
        });
    }
    let k = noisy_count(ratio, data.len());
    if source.len() < k {
        return Err(Error::InsufficientSource {
            have: source.len(),
            need: k,
        });
    }
    let mut out = data.clone();
    let targets = pick_indices(data.len(), k, seed, tag::NOISE_PICK);
    let sources = pick_indices(source.len(), k, seed, tag::NOISE_SOURCE);
    for (&t, &s) in targets.iter().zip(&sources) {
        out.substitute_features(t, source.feature_row(s));
    }
    Ok(out)
}

/// Training setup for the uncertainty ensemble behind semantic noise.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            hidden: vec![128, 128],
            dropout: 0.25,
            epochs: 15,
            batch_size: 128,
            learning_rate: 1e-3,
        }
    }
}

/// Plain mini-batch training on observed labels; no filtering involved.
fn train_plain(data: &LabeledDataset, cfg: &UncertaintyConfig, seed: u64) -> Result<ModelState> {
    let model_cfg = ModelConfig::new(data.dim(), cfg.hidden.clone(), data.classes(), cfg.dropout)?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig(
            "uncertainty ensemble needs batch_size >= 1 and epochs >= 1".into(),
        ));
    }
    let mut model = ModelState::init(model_cfg, rng::derive(seed, &[tag::MODEL_INIT]));
    let n = data.len();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch]));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data.feature_row(i).to_vec()).collect();
            let features = Matrix::from_rows(&rows)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.observed()[i]).collect();
            let mode = ForwardMode::Stochastic(rng::derive(
                seed,
                &[tag::UPDATE_DROPOUT, epoch, b as u64],
            ));
            model.sgd_step(&features, &labels, cfg.learning_rate, mode)?;
        }
    }
    Ok(model)
}

/// Deterministic class probabilities for every example.
fn full_probs(model: &ModelState, data: &LabeledDataset) -> Result<Matrix> {
    let n = data.len();
    let mut probs = Matrix::zeros(n, data.classes());
    let chunk = 512;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let rows: Vec<Vec<f64>> = (start..end).map(|i| data.feature_row(i).to_vec()).collect();
        let p = model.forward(&Matrix::from_rows(&rows)?, ForwardMode::Deterministic)?;
        for (k, i) in (start..end).enumerate() {
            probs.row_mut(i).copy_from_slice(p.row(k));
        }
        start = end;
    }
    Ok(probs)
}

/// Train `n_models` independently seeded networks on the clean dataset and
/// return each member's class probabilities for every example.
pub fn ensemble_probs(
    data: &LabeledDataset,
    n_models: usize,
    cfg: &UncertaintyConfig,
    seed: u64,
) -> Result<Vec<Matrix>> {
    let mut slots: Vec<Result<Matrix>> = (0..n_models).map(|_| Ok(Matrix::zeros(0, 0))).collect();
    Exec::default().for_each_mut(&mut slots, |m, slot| {
        *slot = train_plain(data, cfg, rng::derive(seed, &[tag::SEMANTIC_MODEL, m as u64]))
            .and_then(|model| full_probs(&model, data));
    });
    slots.into_iter().collect()
}

/// Per-example disagreement: the sum over members of the KL divergence from
/// the member's prediction to the ensemble mean, in nats.
///
/// Identical members yield exactly zero, and the value is invariant to
/// permuting the members.
pub fn uncertainty_from_probs(members: &[Matrix]) -> Result<Vec<f64>> {
    let Some(first) = members.first() else {
        return Err(Error::InvalidParam("uncertainty of an empty ensemble".into()));
    };
    let (n, c) = (first.rows(), first.cols());
    if members.iter().any(|m| m.rows() != n || m.cols() != c) {
        return Err(Error::Shape {
            expected: format!("{n}x{c} probability matrices"),
            got: "ragged ensemble".into(),
        });
    }
    let inv = 1.0 / members.len() as f64;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut mean = vec![0.0; c];
        for m in members {
            for (acc, &p) in mean.iter_mut().zip(m.row(i)) {
                *acc += p * inv;
            }
        }
        let mut total = 0.0;
        for m in members {
            let mut kl = 0.0;
            for (&p, &q) in m.row(i).iter().zip(&mean) {
                if p > 0.0 {
                    kl += p * (p / q.max(1e-12)).ln();
                }
            }
            total += kl.max(0.0);
        }
        out[i] = total;
    }
    Ok(out)
}

/// Train an ensemble on the clean dataset and score every example's
/// KL-to-mean disagreement.
pub fn semantic_uncertainty(
    data: &LabeledDataset,
    n_models: usize,
    cfg: &UncertaintyConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_models < 2 {
        return Err(Error::InvalidParam("semantic noise needs N >= 2 models".into()));
    }
    check_clean(data)?;
    let members = ensemble_probs(data, n_models, cfg, seed)?;
    uncertainty_from_probs(&members)
}

/// Semantic noise: flip the labels of the `floor(ratio * n / 100)` most
/// uncertain examples to the alternative class the ensemble finds most
/// plausible. Ties in uncertainty break toward the smaller id.
pub fn apply_semantic(
    data: &LabeledDataset,
    ratio: f64,
    n_models: usize,
    seed: u64,
    cfg: &UncertaintyConfig,
) -> Result<LabeledDataset> {
    check_ratio(ratio)?;
    check_clean(data)?;
    if n_models < 2 {
        return Err(Error::InvalidParam("semantic noise needs N >= 2 models".into()));
    }
    if data.classes() < 2 {
        return Err(Error::InvalidParam("need at least 2 classes".into()));
    }
    let members = ensemble_probs(data, n_models, cfg, seed)?;
    let uncertainty = uncertainty_from_probs(&members)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        uncertainty[b]
            .total_cmp(&uncertainty[a])
            .then(data.id(a).cmp(&data.id(b)))
    });
    let k = noisy_count(ratio, data.len());

    let inv = 1.0 / members.len() as f64;
    let mut out = data.clone();
    for &i in &order[..k] {
        let truth = data.truth()[i];
        let mut best = usize::MAX;
        let mut best_p = f64::NEG_INFINITY;
        for c in 0..data.classes() {
            if c == truth {
                continue;
            }
            let p: f64 = members.iter().map(|m| m.get(i, c)).sum::<f64>() * inv;
            if p > best_p {
                best_p = p;
                best = c;
            }
        }
        out.corrupt_label(i, best);
    }
    Ok(out)
}

/// Empirical row-stochastic matrix of observed-given-true label counts.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionMatrix {
    values: Matrix,
}

impl CorruptionMatrix {
    /// `values[true][observed] = count(true, observed) / count(true)`;
    /// classes with no examples get a one-hot diagonal row.
    pub fn from_dataset(data: &LabeledDataset) -> Self {
        let c = data.classes();
        let mut counts = vec![0usize; c * c];
        let mut totals = vec![0usize; c];
        for (&t, &o) in data.truth().iter().zip(data.observed()) {
            counts[t * c + o] += 1;
            totals[t] += 1;
        }
        let mut values = Matrix::zeros(c, c);
        for t in 0..c {
            if totals[t] == 0 {
                values.set(t, t, 1.0);
            } else {
                for o in 0..c {
                    values.set(t, o, counts[t * c + o] as f64 / totals[t] as f64);
                }
            }
        }
        CorruptionMatrix { values }
    }

    pub fn classes(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, true_class: usize, observed: usize) -> f64 {
        self.values.get(true_class, observed)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Convenience alias matching the operation name used elsewhere.
pub fn corruption_matrix(data: &LabeledDataset) -> CorruptionMatrix {
    CorruptionMatrix::from_dataset(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_clusters;

    fn clean(n_per_class: usize, classes: usize) -> LabeledDataset {
        synth_clusters(classes, n_per_class, classes.max(2), 0.3, 11).unwrap()
    }

    #[test]
    fn zero_ratio_is_identity_for_all_kinds() {
        let d = clean(20, 4);
        assert_eq!(apply_sym(&d, 0.0, 1).unwrap(), d);
        assert_eq!(apply_asym(&d, 0.0, 1).unwrap(), d);
        let src = clean(20, 4);
        assert_eq!(apply_openset(&d, &src, 0.0, 1).unwrap(), d);
    }

    #[test]
    fn sym_flags_exact_count_and_never_true_label() {
        let d = clean(100, 5);
        let noisy = apply_sym(&d, 37.0, 3).unwrap();
        let expected = (37.0 * d.len() as f64 / 100.0).floor() as usize;
        assert_eq!(noisy.noisy().iter().filter(|&&f| f).count(), expected);
        for i in 0..noisy.len() {
            if noisy.is_noisy(i) {
                assert_ne!(noisy.observed()[i], noisy.truth()[i]);
            } else {
                assert_eq!(noisy.observed()[i], noisy.truth()[i]);
            }
        }
    }

    #[test]
    fn sym_is_deterministic() {
        let d = clean(50, 3);
        assert_eq!(apply_sym(&d, 40.0, 9).unwrap(), apply_sym(&d, 40.0, 9).unwrap());
        assert_ne!(apply_sym(&d, 40.0, 9).unwrap(), apply_sym(&d, 40.0, 10).unwrap());
    }

    #[test]
    fn sym_rejects_bad_ratio_and_dirty_input() {
        let d = clean(10, 3);
        assert!(apply_sym(&d, 100.0, 0).is_err());
        assert!(apply_sym(&d, -1.0, 0).is_err());
        let dirty = apply_sym(&d, 50.0, 0).unwrap();
        assert!(apply_sym(&dirty, 10.0, 0).is_err());
    }

    #[test]
    fn sym_empirical_matrix_matches_ideal() {
        let d = clean(1000, 10); // n = 10000
        let noisy = apply_sym(&d, 60.0, 6).unwrap();
        let m = corruption_matrix(&noisy);
        for t in 0..10 {
            for o in 0..10 {
                let ideal = if t == o { 0.4 } else { 0.6 / 9.0 };
                assert!(
                    (m.get(t, o) - ideal).abs() <= 0.02,
                    "({t},{o}): {} vs {ideal}",
                    m.get(t, o)
                );
            }
        }
    }

    #[test]
    fn asym_shifts_to_next_class_with_wraparound() {
        let d = clean(1000, 10);
        let noisy = apply_asym(&d, 40.0, 6).unwrap();
        let mut saw_wrap = false;
        for i in 0..noisy.len() {
            if noisy.is_noisy(i) {
                assert_eq!(noisy.observed()[i], (noisy.truth()[i] + 1) % 10);
                if noisy.truth()[i] == 9 {
                    assert_eq!(noisy.observed()[i], 0);
                    saw_wrap = true;
                }
            }
        }
        assert!(saw_wrap, "40% of 10000 should have hit class 9");
        let m = corruption_matrix(&noisy);
        for t in 0..10 {
            for o in 0..10 {
                let ideal = if t == o {
                    0.6
                } else if o == (t + 1) % 10 {
                    0.4
                } else {
                    0.0
                };
                assert!((m.get(t, o) - ideal).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn openset_keeps_labels_and_draws_without_replacement() {
        let d = clean(50, 4);
        let src = synth_clusters(4, 60, 4, 0.3, 99).unwrap();
        let noisy = apply_openset(&d, &src, 30.0, 2).unwrap();
        let k = (30.0 * d.len() as f64 / 100.0).floor() as usize;
        assert_eq!(noisy.noisy().iter().filter(|&&f| f).count(), k);
        let mut replaced_rows = Vec::new();
        for i in 0..noisy.len() {
            if noisy.is_noisy(i) {
                assert_eq!(noisy.observed()[i], noisy.truth()[i]);
                assert_ne!(noisy.feature_row(i), d.feature_row(i));
                replaced_rows.push(noisy.feature_row(i).to_vec());
            } else {
                assert_eq!(noisy.feature_row(i), d.feature_row(i));
            }
        }
        // Every replacement appears in the source, and all are distinct.
        for row in &replaced_rows {
            assert!((0..src.len()).any(|s| src.feature_row(s) == &row[..]));
        }
        replaced_rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        replaced_rows.dedup();
        assert_eq!(replaced_rows.len(), k);
    }

    #[test]
    fn openset_rejects_dim_mismatch_and_small_source() {
        let d = clean(50, 4);
        let bad_dim = synth_clusters(5, 50, 5, 0.3, 1).unwrap();
        assert!(apply_openset(&d, &bad_dim, 10.0, 0).is_err());
        let small = synth_clusters(4, 1, 4, 0.3, 1).unwrap();
        assert!(matches!(
            apply_openset(&d, &small, 50.0, 0),
            Err(Error::InsufficientSource { .. })
        ));
    }

    #[test]
    fn uncertainty_hand_computed_two_member_case() {
        let p1 = Matrix::from_vec(1, 2, vec![0.9, 0.1]).unwrap();
        let p2 = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let u = uncertainty_from_probs(&[p1, p2]).unwrap();
        assert!((u[0] - 0.2035).abs() <= 1e-3, "got {}", u[0]);
    }

    #[test]
    fn uncertainty_of_identical_members_is_exactly_zero() {
        let p = Matrix::from_vec(2, 3, vec![0.2, 0.5, 0.3, 1.0, 0.0, 0.0]).unwrap();
        let u = uncertainty_from_probs(&[p.clone(), p.clone(), p]).unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn uncertainty_is_permutation_invariant() {
        let p1 = Matrix::from_vec(1, 2, vec![0.9, 0.1]).unwrap();
        let p2 = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let p3 = Matrix::from_vec(1, 2, vec![0.3, 0.7]).unwrap();
        let a = uncertainty_from_probs(&[p1.clone(), p2.clone(), p3.clone()]).unwrap();
        let b = uncertainty_from_probs(&[p3, p1, p2]).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    // Enough capacity and epochs that the members enter the memorization
    // regime; underfit members disagree on far-away extrapolations instead
    // of on the genuinely ambiguous overlap.
    fn tiny_uncertainty_cfg() -> UncertaintyConfig {
        UncertaintyConfig {
            hidden: vec![32],
            dropout: 0.2,
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-3,
        }
    }

    #[test]
    fn semantic_flips_most_uncertain_to_other_class() {
        let d = synth_clusters(2, 120, 2, 1.6, 21).unwrap();
        let noisy = apply_semantic(&d, 20.0, 3, 4, &tiny_uncertainty_cfg()).unwrap();
        let k = (20.0 * d.len() as f64 / 100.0).floor() as usize;
        assert_eq!(noisy.noisy().iter().filter(|&&f| f).count(), k);
        for i in 0..noisy.len() {
            if noisy.is_noisy(i) {
                assert_ne!(noisy.observed()[i], noisy.truth()[i]);
                // features untouched
                assert_eq!(noisy.feature_row(i), d.feature_row(i));
            }
        }
    }

    #[test]
    fn semantic_noise_concentrates_in_the_overlap() {
        // With two well-separated but overlapping clusters, the flipped
        // examples should sit closer to the opposite class mean than the
        // clean ones do.
        let d = synth_clusters(2, 120, 2, 1.6, 21).unwrap();
        let noisy = apply_semantic(&d, 20.0, 3, 4, &tiny_uncertainty_cfg()).unwrap();
        let scale = crate::dataset::SYNTH_MEAN_DISTANCE / 2.0f64.sqrt();
        let dist_to_other = |i: usize| {
            let other = 1 - noisy.truth()[i];
            let row = noisy.feature_row(i);
            let mut s = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let m = if j == other { scale } else { 0.0 };
                s += (v - m) * (v - m);
            }
            s.sqrt()
        };
        let (mut flip_sum, mut flip_n, mut clean_sum, mut clean_n) = (0.0, 0, 0.0, 0);
        for i in 0..noisy.len() {
            if noisy.is_noisy(i) {
                flip_sum += dist_to_other(i);
                flip_n += 1;
            } else {
                clean_sum += dist_to_other(i);
                clean_n += 1;
            }
        }
        assert!(flip_n > 0 && clean_n > 0);
        assert!(
            flip_sum / (flip_n as f64) < clean_sum / (clean_n as f64),
            "flipped examples should lie nearer the confusable class"
        );
    }

    #[test]
    fn semantic_zero_ratio_is_identity() {
        let d = synth_clusters(2, 30, 2, 0.5, 3).unwrap();
        let out = apply_semantic(&d, 0.0, 2, 0, &tiny_uncertainty_cfg()).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn corruption_matrix_of_clean_data_is_identity() {
        let d = clean(30, 4);
        let m = corruption_matrix(&d);
        for t in 0..4 {
            for o in 0..4 {
                assert_eq!(m.get(t, o), if t == o { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn corruption_matrix_rows_sum_to_one() {
        let d = clean(100, 6);
        let noisy = apply_sym(&d, 45.0, 8).unwrap();
        let m = corruption_matrix(&noisy);
        for t in 0..6 {
            let s: f64 = (0..6).map(|o| m.get(t, o)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn corruption_matrix_empty_class_gets_one_hot() {
        // Build a dataset over 3 classes where class 2 never occurs.
        let features = Matrix::from_vec(4, 2, vec![0.0; 8]).unwrap();
        let d = LabeledDataset::new_clean(features, vec![0, 0, 1, 1], 3).unwrap();
        let m = corruption_matrix(&d);
        assert_eq!(m.get(2, 2), 1.0);
        assert_eq!(m.get(2, 0), 0.0);
    }
}
