//! Small-loss selection, consensus intersection, and the temporal pool.
//!
//! A network that has not yet overfit assigns small losses to clean
//! examples, so the `(100-eps)%` smallest-loss examples of a scope act as a
//! clean-set proxy. Intersecting the small-loss sets of several perturbed
//! networks removes the noisy examples that only one member happened to
//! memorize. The temporal pool carries the per-epoch selections that the
//! temporal variant intersects against.

use std::collections::VecDeque;
use std::io::Write;
use std::str::FromStr;

use crate::dataset::ExampleId;
use crate::error::{Error, Result};
use crate::model::LossVector;

/// What a selection was computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionScope {
    MiniBatch,
    FullBatch,
}

/// Number of ensemble members used for filtering; `Infinite` means
/// "intersect with every selection since filtering began".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleSize {
    Finite(usize),
    Infinite,
}

impl EnsembleSize {
    pub fn validate(self) -> Result<()> {
        if let EnsembleSize::Finite(0) = self {
            return Err(Error::InvalidParam("ensemble size must be >= 1".into()));
        }
        Ok(())
    }

    /// Finite member count, if any.
    pub fn finite(self) -> Option<usize> {
        match self {
            EnsembleSize::Finite(m) => Some(m),
            EnsembleSize::Infinite => None,
        }
    }

    /// How many preceding selections the temporal pool retains.
    pub fn pool_capacity(self) -> Option<usize> {
        self.finite().map(|m| m - 1)
    }
}

impl FromStr for EnsembleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinite") || t == "∞" {
            return Ok(EnsembleSize::Infinite);
        }
        let m: usize = t
            .parse()
            .map_err(|_| Error::InvalidParam(format!("bad ensemble size {s:?}")))?;
        let e = EnsembleSize::Finite(m);
        e.validate()?;
        Ok(e)
    }
}

impl std::fmt::Display for EnsembleSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnsembleSize::Finite(m) => m.fmt(f),
            EnsembleSize::Infinite => write!(f, "inf"),
        }
    }
}

/// A set of example ids chosen as clean at one filtering step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionSet {
    ids: Vec<ExampleId>, // sorted ascending
    scope: SelectionScope,
    epoch: u64,
}

impl SelectionSet {
    /// Build from arbitrary ids; duplicates collapse, order is normalized.
    pub fn new(mut ids: Vec<ExampleId>, scope: SelectionScope, epoch: u64) -> Self {
        ids.sort_unstable();
        ids.dedup();
        SelectionSet { ids, scope, epoch }
    }

    pub fn ids(&self) -> &[ExampleId] {
        &self.ids
    }

    pub fn scope(&self) -> SelectionScope {
        self.scope
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: ExampleId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Sorted-merge intersection; the result keeps `self`'s scope and the
    /// later epoch tag.
    fn intersect(&self, other: &SelectionSet) -> SelectionSet {
        let mut out = Vec::with_capacity(self.ids.len().min(other.ids.len()));
        let (mut i, mut j) = (0, 0);
        while i < self.ids.len() && j < other.ids.len() {
            match self.ids[i].cmp(&other.ids[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.ids[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        SelectionSet {
            ids: out,
            scope: self.scope,
            epoch: self.epoch.max(other.epoch),
        }
    }

    /// Dump as columnar text (`id` per line under a header), for offline
    /// precision analysis.
    pub fn write_columnar<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "id")?;
        for id in &self.ids {
            writeln!(out, "{id}")?;
        }
        Ok(())
    }
}

/// The `(100-eps)%` smallest-loss examples of a scope.
///
/// Keeps `k = round((100 - eps)/100 * n)` examples (round half up); ties
/// break toward the smaller id so the result is deterministic.
pub fn small_loss_select(
    losses: &LossVector,
    ids: &[ExampleId],
    noise_ratio: f64,
    scope: SelectionScope,
    epoch: u64,
) -> Result<SelectionSet> {
    if !(0.0..100.0).contains(&noise_ratio) {
        return Err(Error::InvalidRatio { ratio: noise_ratio });
    }
    if losses.len() != ids.len() {
        return Err(Error::Shape {
            expected: format!("{} ids", losses.len()),
            got: format!("{} ids", ids.len()),
        });
    }
    let n = ids.len();
    let keep = (((100.0 - noise_ratio) / 100.0) * n as f64 + 0.5).floor() as usize;
    let keep = keep.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        losses.values()[a]
            .total_cmp(&losses.values()[b])
            .then(ids[a].cmp(&ids[b]))
    });
    let selected: Vec<ExampleId> = order[..keep].iter().map(|&i| ids[i]).collect();
    Ok(SelectionSet::new(selected, scope, epoch))
}

/// Ensemble consensus: the exact intersection of the members' selections.
///
/// With a single set this is the identity, which is how self-training drops
/// out of the same machinery. All sets must share a scope, and at most
/// `ensemble` members may vote.
pub fn consensus(sets: &[SelectionSet], ensemble: EnsembleSize) -> Result<SelectionSet> {
    let Some(first) = sets.first() else {
        return Err(Error::InvalidParam("consensus over zero sets".into()));
    };
    if let Some(m) = ensemble.finite() {
        if sets.len() > m {
            return Err(Error::InvalidParam(format!(
                "{} sets exceed ensemble size {m}",
                sets.len()
            )));
        }
    }
    if sets.iter().any(|s| s.scope() != first.scope()) {
        return Err(Error::MixedScopes);
    }
    let mut acc = first.clone();
    for s in &sets[1..] {
        acc = acc.intersect(s);
    }
    Ok(acc)
}

/// Ring buffer of the preceding epochs' full-epoch selections.
///
/// Holds at most `M - 1` entries for a finite ensemble (oldest evicted
/// first) and everything for the infinite one. Entry epochs must strictly
/// increase.
#[derive(Clone, Debug)]
pub struct TemporalPool {
    entries: VecDeque<SelectionSet>,
    capacity: Option<usize>,
}

impl TemporalPool {
    pub fn for_ensemble(ensemble: EnsembleSize) -> Self {
        TemporalPool {
            entries: VecDeque::new(),
            capacity: ensemble.pool_capacity(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &SelectionSet> {
        self.entries.iter()
    }

    /// Record an epoch's selection, evicting the oldest beyond capacity.
    pub fn push(&mut self, set: SelectionSet) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if set.epoch() <= last.epoch() {
                return Err(Error::NonIncreasingEpoch {
                    last: last.epoch(),
                    got: set.epoch(),
                });
            }
        }
        if self.capacity == Some(0) {
            return Ok(());
        }
        self.entries.push_back(set);
        if let Some(cap) = self.capacity {
            while self.entries.len() > cap {
                self.entries.pop_front();
            }
        }
        Ok(())
    }
}

/// Intersect the current selection with the pooled selections of the
/// preceding `min(M - 1, available)` epochs.
///
/// With an empty pool (first epoch, or `M = 1`) the current selection
/// passes through unchanged. An empty intersection is a legal result; the
/// consuming trainer decides what to do with it.
pub fn temporal_consensus(
    pool: &TemporalPool,
    current: &SelectionSet,
    ensemble: EnsembleSize,
    epoch: u64,
) -> Result<SelectionSet> {
    if let Some(bad) = pool.entries().find(|p| p.epoch() >= epoch) {
        return Err(Error::InvalidParam(format!(
            "pool entry from epoch {} not before epoch {epoch}",
            bad.epoch()
        )));
    }
    let take = match ensemble.pool_capacity() {
        Some(cap) => cap.min(pool.len()),
        None => pool.len(),
    };
    let mut acc = current.clone();
    for p in pool.entries().skip(pool.len() - take) {
        acc = acc.intersect(p);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(raw: &[u64]) -> Vec<ExampleId> {
        raw.iter().map(|&v| ExampleId(v)).collect()
    }

    fn set(raw: &[u64], scope: SelectionScope, epoch: u64) -> SelectionSet {
        SelectionSet::new(ids(raw), scope, epoch)
    }

    #[test]
    fn select_keeps_everything_at_zero_ratio() {
        let losses = LossVector::new(vec![0.5, 0.1, 0.9]).unwrap();
        let s = small_loss_select(&losses, &ids(&[5, 6, 7]), 0.0, SelectionScope::MiniBatch, 1)
            .unwrap();
        assert_eq!(s.ids(), &ids(&[5, 6, 7])[..]);
    }

    #[test]
    fn select_matches_spec_example() {
        let losses = LossVector::new(vec![0.1, 0.9, 0.2, 0.5]).unwrap();
        let s = small_loss_select(
            &losses,
            &ids(&[0, 1, 2, 3]),
            50.0,
            SelectionScope::MiniBatch,
            1,
        )
        .unwrap();
        assert_eq!(s.ids(), &ids(&[0, 2])[..]);
    }

    #[test]
    fn select_breaks_ties_by_lowest_id() {
        let losses = LossVector::new(vec![1.0; 4]).unwrap();
        let s = small_loss_select(
            &losses,
            &ids(&[9, 3, 7, 1]),
            50.0,
            SelectionScope::MiniBatch,
            1,
        )
        .unwrap();
        assert_eq!(s.ids(), &ids(&[1, 3])[..]);
    }

    #[test]
    fn select_rounds_half_up() {
        // (100-50)% of 5 = 2.5 -> keep 3
        let losses = LossVector::new(vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let s = small_loss_select(
            &losses,
            &ids(&[0, 1, 2, 3, 4]),
            50.0,
            SelectionScope::MiniBatch,
            1,
        )
        .unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn select_rejects_bad_ratio() {
        let losses = LossVector::new(vec![0.1]).unwrap();
        for ratio in [-1.0, 100.0, 150.0] {
            assert!(matches!(
                small_loss_select(&losses, &ids(&[0]), ratio, SelectionScope::MiniBatch, 1),
                Err(Error::InvalidRatio { .. })
            ));
        }
    }

    #[test]
    fn consensus_single_set_is_identity() {
        let a = set(&[1, 2, 3], SelectionScope::MiniBatch, 1);
        let c = consensus(std::slice::from_ref(&a), EnsembleSize::Finite(1)).unwrap();
        assert_eq!(c.ids(), a.ids());
    }

    #[test]
    fn consensus_intersects() {
        let a = set(&[1, 2, 3], SelectionScope::MiniBatch, 1);
        let b = set(&[2, 3, 4], SelectionScope::MiniBatch, 1);
        let c = consensus(&[a, b], EnsembleSize::Finite(2)).unwrap();
        assert_eq!(c.ids(), &ids(&[2, 3])[..]);
    }

    #[test]
    fn consensus_rejects_mixed_scopes_and_overflow() {
        let a = set(&[1], SelectionScope::MiniBatch, 1);
        let b = set(&[1], SelectionScope::FullBatch, 1);
        assert!(matches!(
            consensus(&[a.clone(), b], EnsembleSize::Finite(2)),
            Err(Error::MixedScopes)
        ));
        assert!(consensus(&[a.clone(), a.clone(), a], EnsembleSize::Finite(2)).is_err());
    }

    #[test]
    fn temporal_empty_pool_returns_current() {
        let pool = TemporalPool::for_ensemble(EnsembleSize::Finite(3));
        let cur = set(&[4, 5], SelectionScope::MiniBatch, 1);
        let out = temporal_consensus(&pool, &cur, EnsembleSize::Finite(3), 1).unwrap();
        assert_eq!(out.ids(), cur.ids());
    }

    #[test]
    fn temporal_chains_intersections() {
        let mut pool = TemporalPool::for_ensemble(EnsembleSize::Finite(3));
        pool.push(set(&[1, 2], SelectionScope::FullBatch, 1)).unwrap();
        pool.push(set(&[2, 3], SelectionScope::FullBatch, 2)).unwrap();
        let cur = set(&[2, 4], SelectionScope::MiniBatch, 3);
        let out = temporal_consensus(&pool, &cur, EnsembleSize::Finite(3), 3).unwrap();
        assert_eq!(out.ids(), &ids(&[2])[..]);
    }

    #[test]
    fn temporal_uses_only_last_m_minus_one() {
        let mut pool = TemporalPool::for_ensemble(EnsembleSize::Infinite);
        pool.push(set(&[9], SelectionScope::FullBatch, 1)).unwrap();
        pool.push(set(&[2, 9], SelectionScope::FullBatch, 2)).unwrap();
        pool.push(set(&[2, 9], SelectionScope::FullBatch, 3)).unwrap();
        let cur = set(&[2], SelectionScope::MiniBatch, 4);
        // M = 2: only the epoch-3 entry matters even though the pool kept all.
        let out = temporal_consensus(&pool, &cur, EnsembleSize::Finite(2), 4).unwrap();
        assert_eq!(out.ids(), &ids(&[2])[..]);
        // Infinite M walks the whole pool, and the epoch-1 entry kills id 2.
        let out = temporal_consensus(&pool, &cur, EnsembleSize::Infinite, 4).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn pool_evicts_oldest_and_checks_epochs() {
        let mut pool = TemporalPool::for_ensemble(EnsembleSize::Finite(3));
        for t in 1..=5 {
            pool.push(set(&[t], SelectionScope::FullBatch, t)).unwrap();
        }
        assert_eq!(pool.len(), 2);
        let epochs: Vec<u64> = pool.entries().map(|s| s.epoch()).collect();
        assert_eq!(epochs, vec![4, 5]);
        assert!(matches!(
            pool.push(set(&[0], SelectionScope::FullBatch, 5)),
            Err(Error::NonIncreasingEpoch { .. })
        ));
    }

    #[test]
    fn pool_capacity_zero_for_m_one() {
        let mut pool = TemporalPool::for_ensemble(EnsembleSize::Finite(1));
        pool.push(set(&[1], SelectionScope::FullBatch, 1)).unwrap();
        assert!(pool.is_empty());
    }

    #[test]
    fn ensemble_size_parses() {
        assert_eq!("5".parse::<EnsembleSize>().unwrap(), EnsembleSize::Finite(5));
        assert_eq!("inf".parse::<EnsembleSize>().unwrap(), EnsembleSize::Infinite);
        assert_eq!("INF".parse::<EnsembleSize>().unwrap(), EnsembleSize::Infinite);
        assert!("0".parse::<EnsembleSize>().is_err());
        assert!("x".parse::<EnsembleSize>().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_set() -> impl Strategy<Value = SelectionSet> {
            prop::collection::vec(0u64..50, 0..30)
                .prop_map(|raw| SelectionSet::new(ids(&raw), SelectionScope::MiniBatch, 1))
        }

        proptest! {
            #[test]
            fn consensus_is_subset_and_monotone(sets in prop::collection::vec(arb_set(), 1..5)) {
                let out = consensus(&sets, EnsembleSize::Infinite).unwrap();
                for s in &sets {
                    prop_assert!(out.ids().iter().all(|id| s.contains(*id)));
                }
                if sets.len() > 1 {
                    let fewer = consensus(&sets[..sets.len() - 1], EnsembleSize::Infinite).unwrap();
                    prop_assert!(out.ids().iter().all(|id| fewer.contains(*id)));
                }
            }

            #[test]
            fn selection_is_permutation_invariant(
                pairs in prop::collection::vec((0.0f64..10.0, 0u64..1000), 1..40),
                ratio in 0.0f64..99.0,
            ) {
                let mut pairs = pairs;
                pairs.sort_by(|a, b| a.1.cmp(&b.1));
                pairs.dedup_by_key(|p| p.1);
                let losses = LossVector::new(pairs.iter().map(|p| p.0).collect()).unwrap();
                let id_list: Vec<ExampleId> = pairs.iter().map(|p| ExampleId(p.1)).collect();
                let base = small_loss_select(&losses, &id_list, ratio, SelectionScope::MiniBatch, 1).unwrap();

                let mut shuffled: Vec<(f64, u64)> = pairs.clone();
                shuffled.reverse();
                let losses2 = LossVector::new(shuffled.iter().map(|p| p.0).collect()).unwrap();
                let ids2: Vec<ExampleId> = shuffled.iter().map(|p| ExampleId(p.1)).collect();
                let permuted = small_loss_select(&losses2, &ids2, ratio, SelectionScope::MiniBatch, 1).unwrap();
                prop_assert_eq!(base.ids(), permuted.ids());
            }
        }
    }
}
