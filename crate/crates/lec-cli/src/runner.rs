//! Experiment orchestration and artifact output.
//!
//! One experiment = dataset x noise x methods x repeats. Per (method,
//! repeat) a CSV of per-epoch metrics lands in the output directory, plus
//! a `summary.csv` of final/peak accuracy per method and a `manifest.txt`
//! that reproduces everything byte for byte when fed back to `lec run`.
//!
//! Repeats use distinct noise seeds, but within a repeat every method sees
//! the same corrupted dataset. Independent (method, repeat) runs execute in
//! parallel; each output file belongs to exactly one run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use lec_core::dataset::{self, LabeledDataset, SplitSpec};
use lec_core::metrics::{aggregate, RunSummary};
use lec_core::noise::{self, NoiseKind, UncertaintyConfig};
use lec_core::rng::{self, tag};
use lec_core::trainer::{self, Method, RunLog, TrainConfig, TrainSeeds};

use crate::config::{ConfigError, DatasetSource, ExperimentConfig, MethodEntry};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] lec_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// CSV header of the per-epoch metrics files.
pub const METRICS_HEADER: &str = "epoch,test_acc,label_precision,recall,used_count,skipped_updates";

/// CSV header of `summary.csv`.
pub const SUMMARY_HEADER: &str =
    "method,repeats,final_acc_mean,final_acc_std,peak_acc_mean,peak_acc_std,final_recall_mean";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "NaN".to_string(),
    }
}

/// Render one run's per-epoch metrics as CSV text.
pub fn metrics_csv(log: &RunLog) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for e in &log.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch,
            e.test_accuracy,
            fmt_opt(e.label_precision),
            e.recall,
            e.examples_used,
            e.skipped_updates
        );
    }
    out
}

/// Artifacts of one experiment, with per-method aggregates.
pub struct ExperimentResult {
    pub out_dir: PathBuf,
    pub summaries: Vec<(Method, RunSummary)>,
    pub logs: Vec<(Method, Vec<RunLog>)>,
}

fn build_base(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset), RunError> {
    match &cfg.dataset {
        DatasetSource::Synthetic {
            classes,
            per_class,
            dim,
            spread,
            seed,
            train_fraction,
            test_fraction,
            split_seed,
        } => {
            let data = dataset::synth_clusters(*classes, *per_class, *dim, *spread, *seed)?;
            let (train, test) = data.split(&SplitSpec {
                train_fraction: *train_fraction,
                test_fraction: *test_fraction,
                seed: *split_seed,
            })?;
            Ok((train, test))
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = dataset::load_idx(train_images, train_labels)?;
            let test = dataset::load_idx(test_images, test_labels)?;
            Ok((train, test))
        }
    }
}

fn open_set_source(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
) -> Result<LabeledDataset, RunError> {
    match (&cfg.noise.openset_images, &cfg.noise.openset_labels) {
        (Some(images), Some(labels)) => Ok(dataset::load_idx(images, labels)?),
        (None, None) => match &cfg.dataset {
            DatasetSource::Synthetic {
                classes,
                per_class,
                dim,
                spread,
                ..
            } => {
                let source_spread = cfg.noise.openset_source_spread.unwrap_or(*spread);
                Ok(dataset::synth_clusters(
                    *classes,
                    *per_class,
                    *dim,
                    source_spread,
                    cfg.noise.openset_source_seed,
                )?)
            }
            DatasetSource::Idx { .. } => Err(ConfigError::Invalid {
                file: "<config>".into(),
                msg: "open-set noise on an idx dataset needs openset_images/openset_labels"
                    .into(),
            }
            .into()),
        },
        _ => Err(ConfigError::Invalid {
            file: "<config>".into(),
            msg: "openset_images and openset_labels must be given together".into(),
        }
        .into()),
    }
    .and_then(|source| {
        if source.dim() != train.dim() {
            Err(lec_core::Error::Shape {
                expected: format!("open-set source dimension {}", train.dim()),
                got: format!("{}", source.dim()),
            }
            .into())
        } else {
            Ok(source)
        }
    })
}

/// Noise seed of one repeat: distinct per repeat, shared by every method.
fn repeat_noise_seed(base: u64, repeat: usize) -> u64 {
    rng::derive(base, &[tag::NOISE_REPEAT, repeat as u64])
}

fn corrupt_for_repeat(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    source: Option<&LabeledDataset>,
    repeat: usize,
) -> Result<LabeledDataset, RunError> {
    let seed = repeat_noise_seed(cfg.noise.seed, repeat);
    let ratio = cfg.noise.ratio;
    let out = match cfg.noise.kind {
        None => train.clone(),
        Some(NoiseKind::Sym) => noise::apply_sym(train, ratio, seed)?,
        Some(NoiseKind::Asym) => noise::apply_asym(train, ratio, seed)?,
        Some(NoiseKind::OpenSet) => {
            noise::apply_openset(train, source.expect("source prepared"), ratio, seed)?
        }
        Some(NoiseKind::Semantic) => {
            let ucfg = UncertaintyConfig {
                epochs: cfg.noise.semantic_epochs,
                ..UncertaintyConfig::default()
            };
            noise::apply_semantic(train, ratio, cfg.noise.semantic_ensemble, seed, &ucfg)?
        }
    };
    Ok(out)
}

fn train_config(cfg: &ExperimentConfig, entry: &MethodEntry, repeat: usize) -> TrainConfig {
    let p = &entry.params;
    TrainConfig {
        method: entry.method,
        warmup_epochs: p.warmup,
        total_epochs: p.epochs,
        ensemble: p.ensemble,
        assumed_ratio: cfg.assumed_ratio(entry),
        batch_size: p.batch_size,
        learning_rate: p.learning_rate,
        hidden: p.hidden.clone(),
        dropout: p.dropout,
        seeds: TrainSeeds::from_base(rng::derive(cfg.trainer_seed, &[repeat as u64])),
    }
}

/// Run the experiment, writing CSVs, the manifest, and the summary under
/// `out_dir`. Completed per-run CSVs stay on disk even if a later run
/// fails.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentResult, RunError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("manifest.txt"), cfg.to_manifest())?;

    let (train, test) = build_base(cfg)?;
    let source = if cfg.noise.kind == Some(NoiseKind::OpenSet) {
        Some(open_set_source(cfg, &train)?)
    } else {
        None
    };

    // One corrupted dataset per repeat, shared across methods.
    let corrupted: Vec<LabeledDataset> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| corrupt_for_repeat(cfg, &train, source.as_ref(), r))
        .collect::<Result<_, _>>()?;

    if cfg.dump_dataset {
        for (r, data) in corrupted.iter().enumerate() {
            let mut buf = Vec::new();
            data.write_columnar(&mut buf)?;
            std::fs::write(out_dir.join(format!("dataset_r{r}.txt")), buf)?;
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..cfg.repeats).map(move |r| (m, r)))
        .collect();
    let logs: Vec<((usize, usize), RunLog)> = jobs
        .into_par_iter()
        .map(|(m, r)| {
            let entry = &cfg.methods[m];
            let tc = train_config(cfg, entry, r);
            let log = trainer::train(&corrupted[r], &test, &tc)?;
            let csv = metrics_csv(&log);
            std::fs::write(
                out_dir.join(format!("{}_r{r}.csv", entry_label(cfg, m))),
                csv,
            )?;
            Ok::<_, RunError>(((m, r), log))
        })
        .collect::<Result<_, _>>()?;

    // Stable (method entry, repeat) order regardless of scheduling.
    let mut slots: Vec<Option<RunLog>> = (0..cfg.methods.len() * cfg.repeats).map(|_| None).collect();
    for ((m, r), log) in logs {
        slots[m * cfg.repeats + r] = Some(log);
    }
    let mut by_method: Vec<(Method, Vec<RunLog>)> = Vec::with_capacity(cfg.methods.len());
    for (m, entry) in cfg.methods.iter().enumerate() {
        let runs: Vec<RunLog> = (0..cfg.repeats)
            .map(|r| slots[m * cfg.repeats + r].take().expect("every job ran"))
            .collect();
        by_method.push((entry.method, runs));
    }

    let mut summaries = Vec::new();
    let mut summary_csv = String::from(SUMMARY_HEADER);
    summary_csv.push('\n');
    for (m, (_, runs)) in by_method.iter().enumerate() {
        let s = aggregate(runs)?;
        let _ = writeln!(
            summary_csv,
            "{},{},{},{},{},{},{}",
            entry_label(cfg, m),
            s.runs,
            s.final_acc_mean,
            s.final_acc_std,
            s.peak_acc_mean,
            s.peak_acc_std,
            s.final_recall_mean
        );
        summaries.push((cfg.methods[m].method, s.clone()));
    }
    std::fs::write(out_dir.join("summary.csv"), summary_csv)?;

    Ok(ExperimentResult {
        out_dir: out_dir.to_path_buf(),
        summaries,
        logs: by_method,
    })
}

/// Output label of a method entry; duplicated methods get an index suffix
/// so their files stay distinct.
fn entry_label(cfg: &ExperimentConfig, index: usize) -> String {
    let method = cfg.methods[index].method;
    let duplicated = cfg
        .methods
        .iter()
        .enumerate()
        .any(|(i, e)| i != index && e.method == method);
    if duplicated {
        format!("{method}-{index}")
    } else {
        method.to_string()
    }
}

/// Which hyperparameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Ensemble size M; grid entries are sizes or `inf`.
    M,
    /// Assumed noise-ratio multiplier; grid entries scale the true ratio.
    Eps,
}

impl std::str::FromStr for SweepParam {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" => Ok(SweepParam::M),
            "eps" | "epsilon" | "ratio" => Ok(SweepParam::Eps),
            other => Err(ConfigError::Invalid {
                file: "<args>".into(),
                msg: format!("unknown sweep parameter {other:?} (expected M or eps)"),
            }),
        }
    }
}

/// Sweep summary rows: one per (grid value, method).
pub const SWEEP_HEADER: &str =
    "param,value,method,final_acc_mean,final_acc_std,peak_acc_mean,peak_acc_std,final_recall_mean";

/// Run the experiment once per grid point, overriding the swept parameter
/// for every method entry. Noise seeds depend only on the repeat, so every
/// grid point trains on identical corrupted datasets.
pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    grid: &[String],
    out_dir: &Path,
) -> Result<Vec<ExperimentResult>, RunError> {
    if grid.is_empty() {
        return Err(ConfigError::Invalid {
            file: "<args>".into(),
            msg: "sweep grid is empty".into(),
        }
        .into());
    }
    std::fs::create_dir_all(out_dir)?;
    let mut results = Vec::new();
    let mut sweep_csv = String::from(SWEEP_HEADER);
    sweep_csv.push('\n');
    for raw in grid {
        let mut point = cfg.clone();
        let label: String;
        match param {
            SweepParam::M => {
                let m: lec_core::filtering::EnsembleSize =
                    raw.parse().map_err(|e: lec_core::Error| ConfigError::Invalid {
                        file: "<args>".into(),
                        msg: e.to_string(),
                    })?;
                for entry in &mut point.methods {
                    entry.params.ensemble = m;
                }
                label = format!("{m}");
            }
            SweepParam::Eps => {
                let mult: f64 = raw.parse().map_err(|_| ConfigError::Invalid {
                    file: "<args>".into(),
                    msg: format!("bad eps multiplier {raw:?}"),
                })?;
                let assumed = cfg.noise.ratio * mult;
                if !(0.0..100.0).contains(&assumed) {
                    return Err(ConfigError::Invalid {
                        file: "<args>".into(),
                        msg: format!("eps multiplier {mult} gives assumed ratio {assumed}"),
                    }
                    .into());
                }
                for entry in &mut point.methods {
                    entry.params.assumed_ratio = Some(assumed);
                }
                label = format!("{mult}");
            }
        }
        let sub = out_dir.join(match param {
            SweepParam::M => format!("m_{label}"),
            SweepParam::Eps => format!("eps_{label}"),
        });
        let result = run_experiment(&point, &sub)?;
        for (method, s) in &result.summaries {
            let _ = writeln!(
                sweep_csv,
                "{},{},{},{},{},{},{},{}",
                match param {
                    SweepParam::M => "M",
                    SweepParam::Eps => "eps",
                },
                label,
                method,
                s.final_acc_mean,
                s.final_acc_std,
                s.peak_acc_mean,
                s.peak_acc_std,
                s.final_recall_mean
            );
        }
        results.push(result);
    }
    std::fs::write(out_dir.join("sweep_summary.csv"), sweep_csv)?;
    Ok(results)
}

/// Default grid for the eps sweep: under-, correctly-, and over-estimated.
pub const DEFAULT_EPS_GRID: [&str; 3] = ["0.9", "1.0", "1.1"];
