//! Dataset ingestion and synthesis.
//!
//! A [`LabeledDataset`] carries both the observed (possibly corrupted) label
//! and the hidden true label for every example, plus a stable id that
//! survives splitting and corruption. Sources: IDX-format image files and a
//! synthetic Gaussian-cluster generator.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, tag};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Pairwise distance between synthetic class means; the cluster `spread`
/// parameter is measured against this.
pub const SYNTH_MEAN_DISTANCE: f64 = 4.0;

/// Stable, unique identifier of a training example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExampleId(pub u64);

impl std::fmt::Display for ExampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Ordered collection of examples with observed and hidden true labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    ids: Vec<ExampleId>,
    features: Matrix,
    observed: Vec<usize>,
    truth: Vec<usize>,
    noisy: Vec<bool>,
    classes: usize,
}

impl LabeledDataset {
    /// Build a clean dataset: observed labels equal true labels, nothing is
    /// flagged noisy, ids run `0..n`.
    pub fn new_clean(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape {
                expected: format!("{} labels", features.rows()),
                got: format!("{} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let n = labels.len();
        Ok(LabeledDataset {
            ids: (0..n as u64).map(ExampleId).collect(),
            features,
            observed: labels.clone(),
            truth: labels,
            noisy: vec![false; n],
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ids(&self) -> &[ExampleId] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> ExampleId {
        self.ids[index]
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_row(&self, index: usize) -> &[f64] {
        self.features.row(index)
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn noisy(&self) -> &[bool] {
        &self.noisy
    }

    pub fn is_noisy(&self, index: usize) -> bool {
        self.noisy[index]
    }

    /// Number of examples not flagged noisy.
    pub fn clean_count(&self) -> usize {
        self.noisy.iter().filter(|&&f| !f).count()
    }

    /// True when no example has been corrupted yet.
    pub fn is_clean(&self) -> bool {
        self.noisy.iter().all(|&f| !f)
    }

    /// Map from example id to row index.
    pub fn id_index(&self) -> HashMap<ExampleId, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Relabel one example; the noisy flag tracks `observed != truth`.
    pub(crate) fn corrupt_label(&mut self, index: usize, label: usize) {
        self.observed[index] = label;
        self.noisy[index] = self.observed[index] != self.truth[index];
    }

    /// Replace one example's features with out-of-distribution data; the
    /// example keeps its labels but is flagged noisy.
    pub(crate) fn substitute_features(&mut self, index: usize, row: &[f64]) {
        self.features.row_mut(index).copy_from_slice(row);
        self.noisy[index] = true;
    }

    /// Stratified train/test split by true label; both halves keep their
    /// original ids and the id sets are disjoint.
    pub fn split(&self, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
        spec.validate()?;
        let n = self.len();
        let train_total = (spec.train_fraction * n as f64).floor() as usize;
        let test_total = (spec.test_fraction * n as f64).floor() as usize;

        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
        for (i, &y) in self.truth.iter().enumerate() {
            by_class[y].push(i);
        }
        for (c, members) in by_class.iter_mut().enumerate() {
            let mut r = rng::stream(spec.seed, &[tag::SPLIT_CLASS, c as u64]);
            members.shuffle(&mut r);
        }

        let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let train_counts = apportion(&sizes, spec.train_fraction, train_total, &sizes);
        let capacity: Vec<usize> = sizes
            .iter()
            .zip(&train_counts)
            .map(|(&n_c, &t_c)| n_c - t_c)
            .collect();
        let test_counts = apportion(&sizes, spec.test_fraction, test_total, &capacity);

        let mut train_rows = Vec::with_capacity(train_total);
        let mut test_rows = Vec::with_capacity(test_total);
        for (c, members) in by_class.iter().enumerate() {
            train_rows.extend_from_slice(&members[..train_counts[c]]);
            test_rows.extend_from_slice(&members[train_counts[c]..train_counts[c] + test_counts[c]]);
        }
        train_rows.sort_unstable();
        test_rows.sort_unstable();
        Ok((self.subset(&train_rows), self.subset(&test_rows)))
    }

    fn subset(&self, rows: &[usize]) -> LabeledDataset {
        let mut features = Matrix::zeros(rows.len(), self.dim());
        for (k, &i) in rows.iter().enumerate() {
            features.row_mut(k).copy_from_slice(self.features.row(i));
        }
        LabeledDataset {
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
            features,
            observed: rows.iter().map(|&i| self.observed[i]).collect(),
            truth: rows.iter().map(|&i| self.truth[i]).collect(),
            noisy: rows.iter().map(|&i| self.noisy[i]).collect(),
            classes: self.classes,
        }
    }

    /// Write the label table as columnar text: `id,true,observed,is_noisy`
    /// with one row per example and booleans as `0`/`1`.
    pub fn write_columnar<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "id,true,observed,is_noisy")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.ids[i],
                self.truth[i],
                self.observed[i],
                u8::from(self.noisy[i])
            )?;
        }
        Ok(())
    }
}

/// Parsed rows of the columnar label table.
pub fn parse_columnar<R: BufRead>(input: R) -> Result<Vec<(u64, usize, usize, bool)>> {
    let mut rows = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "id,true,observed,is_noisy" {
                return Err(Error::ColumnarParse {
                    line: 1,
                    msg: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::ColumnarParse {
                line: lineno + 1,
                msg: format!("expected 4 fields, got {}", parts.len()),
            });
        }
        let parse = |s: &str| -> Result<u64> {
            s.trim().parse().map_err(|_| Error::ColumnarParse {
                line: lineno + 1,
                msg: format!("bad integer {s:?}"),
            })
        };
        rows.push((
            parse(parts[0])?,
            parse(parts[1])? as usize,
            parse(parts[2])? as usize,
            parse(parts[3])? != 0,
        ));
    }
    Ok(rows)
}

/// Fractions for a stratified train/test split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.train_fraction)
            || !ok(self.test_fraction)
            || self.train_fraction + self.test_fraction > 1.0 + 1e-12
        {
            return Err(Error::InvalidSplit {
                train: self.train_fraction,
                test: self.test_fraction,
            });
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` slots over classes, capped by
/// per-class `capacity`. Deterministic: ties break on class index.
fn apportion(sizes: &[usize], fraction: f64, total: usize, capacity: &[usize]) -> Vec<usize> {
    let mut counts: Vec<usize> = sizes
        .iter()
        .zip(capacity)
        .map(|(&n_c, &cap)| ((fraction * n_c as f64).floor() as usize).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let rem_a = fraction * sizes[a] as f64 - (fraction * sizes[a] as f64).floor();
        let rem_b = fraction * sizes[b] as f64 - (fraction * sizes[b] as f64).floor();
        rem_b.total_cmp(&rem_a).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(counts.iter().sum());
    while remaining > 0 {
        let before = remaining;
        for &c in &order {
            if remaining == 0 {
                break;
            }
            if counts[c] < capacity[c] {
                counts[c] += 1;
                remaining -= 1;
            }
        }
        if remaining == before {
            break; // no capacity left anywhere
        }
    }
    counts
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    if bytes.len() < offset + 4 {
        return Err(Error::IdxTruncated {
            path: path.display().to_string(),
            needed: offset + 4,
            found: bytes.len(),
        });
    }
    Ok(BigEndian::read_u32(&bytes[offset..offset + 4]))
}

/// Load an IDX image/label file pair into a clean dataset.
///
/// Big-endian format: labels are magic `0x00000801`, count, then one byte
/// per label; images are magic `0x00000803`, count, rows, cols, then
/// row-major pixel bytes. Pixels are scaled to `[0, 1]` by dividing by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let label_bytes = std::fs::read(labels_path)?;
    let magic = read_u32(&label_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32(&label_bytes, 4, labels_path)? as usize;
    if label_bytes.len() < 8 + label_count {
        return Err(Error::IdxTruncated {
            path: labels_path.display().to_string(),
            needed: 8 + label_count,
            found: label_bytes.len(),
        });
    }
    let labels: Vec<usize> = label_bytes[8..8 + label_count]
        .iter()
        .map(|&b| b as usize)
        .collect();

    let image_bytes = std::fs::read(images_path)?;
    let magic = read_u32(&image_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let image_count = read_u32(&image_bytes, 4, images_path)? as usize;
    let rows = read_u32(&image_bytes, 8, images_path)? as usize;
    let cols = read_u32(&image_bytes, 12, images_path)? as usize;
    if image_count != label_count {
        return Err(Error::IdxCountMismatch {
            images: image_count,
            labels: label_count,
        });
    }
    let dim = rows * cols;
    if image_bytes.len() < 16 + image_count * dim {
        return Err(Error::IdxTruncated {
            path: images_path.display().to_string(),
            needed: 16 + image_count * dim,
            found: image_bytes.len(),
        });
    }
    let data: Vec<f64> = image_bytes[16..16 + image_count * dim]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let features = Matrix::from_vec(image_count, dim, data)?;
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(2);
    LabeledDataset::new_clean(features, labels, classes)
}

/// Synthesize isotropic Gaussian clusters, one per class.
///
/// Class means sit on the vertices of a scaled standard simplex (requires
/// `dim >= classes`) with pairwise distance [`SYNTH_MEAN_DISTANCE`]; `spread`
/// is the per-coordinate standard deviation around the mean. Deterministic
/// under `seed`.
pub fn synth_clusters(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || per_class == 0 {
        return Err(Error::InvalidParam(format!(
            "need classes >= 2 and per_class >= 1, got {classes} and {per_class}"
        )));
    }
    if dim < classes {
        return Err(Error::InvalidParam(format!(
            "simplex mean placement needs dim >= classes, got {dim} < {classes}"
        )));
    }
    if !(spread > 0.0) {
        return Err(Error::InvalidParam(format!("spread {spread} must be > 0")));
    }
    // |a*e_i - a*e_j| = a*sqrt(2), so this scale yields the advertised
    // pairwise mean distance.
    let scale = SYNTH_MEAN_DISTANCE / 2.0f64.sqrt();
    let normal = Normal::new(0.0, spread).expect("spread checked above");
    let n = classes * per_class;
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let mut r = rng::stream(seed, &[tag::SYNTH_CLASS, c as u64]);
        for k in 0..per_class {
            let row = features.row_mut(c * per_class + k);
            for v in row.iter_mut() {
                *v = normal.sample(&mut r);
            }
            row[c] += scale;
            labels.push(c);
        }
    }
    LabeledDataset::new_clean(features, labels, classes)
}
