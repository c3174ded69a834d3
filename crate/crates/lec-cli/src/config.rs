//! Experiment configuration: a flat key-value text format.
//!
//! Global keys come first; each `[method NAME]` section adds one training
//! run specification and may override the global training keys. Lines are
//! `key = value`, `#` starts a comment, blank lines are ignored. The
//! manifest written next to experiment output uses the same syntax, so a
//! manifest can be fed straight back to `lec run`.
//!
//! ```text
//! dataset = synthetic
//! classes = 10
//! per_class = 500
//! dim = 16
//! spread = 1.0
//! data_seed = 1
//! train_fraction = 0.8
//! test_fraction = 0.2
//! split_seed = 2
//! noise = sym
//! noise_ratio = 60
//! noise_seed = 3
//! repeats = 4
//! trainer_seed = 10
//! epochs = 60
//! warmup = 10
//! batch_size = 128
//! learning_rate = 0.001
//! hidden = 128,128
//! dropout = 0.25
//! m = 5
//!
//! [method standard]
//! [method ltec]
//! [method coteaching]
//! assumed_ratio = 54
//! ```

use std::path::{Path, PathBuf};

use lec_core::filtering::EnsembleSize;
use lec_core::noise::NoiseKind;
use lec_core::trainer::Method;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}: {msg}")]
    Invalid { file: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
        train_fraction: f64,
        test_fraction: f64,
        split_seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

/// Corruption applied to every repeat's train split.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSetting {
    pub kind: Option<NoiseKind>,
    pub ratio: f64,
    pub seed: u64,
    /// Open-set source (synthetic mode): generator seed and spread.
    pub openset_source_seed: u64,
    pub openset_source_spread: Option<f64>,
    /// Open-set source (idx mode): image/label files.
    pub openset_images: Option<PathBuf>,
    pub openset_labels: Option<PathBuf>,
    /// Semantic noise: ensemble size and training epochs.
    pub semantic_ensemble: usize,
    pub semantic_epochs: u64,
}

/// Per-method training parameters; every field has a global default that a
/// `[method]` section can override.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodParams {
    pub epochs: u64,
    pub warmup: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Defaults to the true noise ratio when absent.
    pub assumed_ratio: Option<f64>,
    pub ensemble: EnsembleSize,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            epochs: 60,
            warmup: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            hidden: vec![128, 128],
            dropout: 0.25,
            assumed_ratio: None,
            ensemble: EnsembleSize::Finite(5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodEntry {
    pub method: Method,
    pub params: MethodParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub noise: NoiseSetting,
    pub repeats: usize,
    pub trainer_seed: u64,
    pub methods: Vec<MethodEntry>,
    /// Dump each repeat's corrupted label table next to the CSVs.
    pub dump_dataset: bool,
}

impl ExperimentConfig {
    /// Effective assumed noise ratio of a method entry.
    pub fn assumed_ratio(&self, entry: &MethodEntry) -> f64 {
        entry.params.assumed_ratio.unwrap_or(self.noise.ratio)
    }

    /// Canonical manifest text; parseable by [`parse_config_str`] and
    /// sufficient to reproduce every CSV byte for byte.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        out.push_str("# resolved experiment manifest\n");
        match &self.dataset {
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
                out.push_str("dataset = synthetic\n");
                out.push_str(&format!("classes = {classes}\n"));
                out.push_str(&format!("per_class = {per_class}\n"));
                out.push_str(&format!("dim = {dim}\n"));
                out.push_str(&format!("spread = {spread}\n"));
                out.push_str(&format!("data_seed = {seed}\n"));
                out.push_str(&format!("train_fraction = {train_fraction}\n"));
                out.push_str(&format!("test_fraction = {test_fraction}\n"));
                out.push_str(&format!("split_seed = {split_seed}\n"));
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                out.push_str("dataset = idx\n");
                out.push_str(&format!("train_images = {}\n", train_images.display()));
                out.push_str(&format!("train_labels = {}\n", train_labels.display()));
                out.push_str(&format!("test_images = {}\n", test_images.display()));
                out.push_str(&format!("test_labels = {}\n", test_labels.display()));
            }
        }
        match self.noise.kind {
            None => out.push_str("noise = none\n"),
            Some(kind) => {
                out.push_str(&format!("noise = {kind}\n"));
                out.push_str(&format!("noise_ratio = {}\n", self.noise.ratio));
                out.push_str(&format!("noise_seed = {}\n", self.noise.seed));
                if kind == NoiseKind::OpenSet {
                    if let Some(p) = &self.noise.openset_images {
                        out.push_str(&format!("openset_images = {}\n", p.display()));
                    }
                    if let Some(p) = &self.noise.openset_labels {
                        out.push_str(&format!("openset_labels = {}\n", p.display()));
                    }
                    out.push_str(&format!(
                        "openset_source_seed = {}\n",
                        self.noise.openset_source_seed
                    ));
                    if let Some(s) = self.noise.openset_source_spread {
                        out.push_str(&format!("openset_source_spread = {s}\n"));
                    }
                }
                if kind == NoiseKind::Semantic {
                    out.push_str(&format!(
                        "semantic_ensemble = {}\n",
                        self.noise.semantic_ensemble
                    ));
                    out.push_str(&format!("semantic_epochs = {}\n", self.noise.semantic_epochs));
                }
            }
        }
        out.push_str(&format!("repeats = {}\n", self.repeats));
        out.push_str(&format!("trainer_seed = {}\n", self.trainer_seed));
        if self.dump_dataset {
            out.push_str("dump_dataset = true\n");
        }
        for entry in &self.methods {
            let p = &entry.params;
            out.push_str(&format!("\n[method {}]\n", entry.method));
            out.push_str(&format!("epochs = {}\n", p.epochs));
            out.push_str(&format!("warmup = {}\n", p.warmup));
            out.push_str(&format!("batch_size = {}\n", p.batch_size));
            out.push_str(&format!("learning_rate = {}\n", p.learning_rate));
            out.push_str(&format!(
                "hidden = {}\n",
                p.hidden
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            ));
            out.push_str(&format!("dropout = {}\n", p.dropout));
            if let Some(r) = p.assumed_ratio {
                out.push_str(&format!("assumed_ratio = {r}\n"));
            }
            out.push_str(&format!("m = {}\n", p.ensemble));
        }
        out
    }
}

struct Parser<'a> {
    file: String,
    defaults: MethodParams,
    methods: Vec<MethodEntry>,
    // global keys collected before validation
    globals: std::collections::HashMap<&'a str, (usize, String)>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, line: usize, msg: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError::Parse {
            file: self.file.clone(),
            line,
            msg: msg.into(),
        })
    }
}

const GLOBAL_KEYS: &[&str] = &[
    "dataset",
    "classes",
    "per_class",
    "dim",
    "spread",
    "data_seed",
    "train_fraction",
    "test_fraction",
    "split_seed",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "noise",
    "noise_ratio",
    "noise_seed",
    "openset_source_seed",
    "openset_source_spread",
    "openset_images",
    "openset_labels",
    "semantic_ensemble",
    "semantic_epochs",
    "repeats",
    "trainer_seed",
    "dump_dataset",
];

const METHOD_KEYS: &[&str] = &[
    "epochs",
    "warmup",
    "batch_size",
    "learning_rate",
    "hidden",
    "dropout",
    "assumed_ratio",
    "m",
];

fn apply_method_key(
    params: &mut MethodParams,
    key: &str,
    value: &str,
) -> Result<(), String> {
    let bad = |what: &str| format!("bad {what} value {value:?}");
    match key {
        "epochs" => params.epochs = value.parse().map_err(|_| bad("epochs"))?,
        "warmup" => params.warmup = value.parse().map_err(|_| bad("warmup"))?,
        "batch_size" => params.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
        "learning_rate" => {
            params.learning_rate = value.parse().map_err(|_| bad("learning_rate"))?
        }
        "dropout" => params.dropout = value.parse().map_err(|_| bad("dropout"))?,
        "assumed_ratio" => {
            params.assumed_ratio = Some(value.parse().map_err(|_| bad("assumed_ratio"))?)
        }
        "m" => params.ensemble = value.parse().map_err(|e| format!("{e}"))?,
        "hidden" => {
            let mut widths = Vec::new();
            for part in value.split(',') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                widths.push(part.parse().map_err(|_| bad("hidden"))?);
            }
            params.hidden = widths;
        }
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Parse a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &path.display().to_string())
}

/// Parse config text; `file` only labels error messages.
pub fn parse_config_str(text: &str, file: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut p = Parser {
        file: file.to_string(),
        defaults: MethodParams::default(),
        methods: Vec::new(),
        globals: std::collections::HashMap::new(),
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(inner) = rest.strip_suffix(']') else {
                return p.err(lineno, "unterminated section header");
            };
            let Some(name) = inner.trim().strip_prefix("method") else {
                return p.err(lineno, format!("unknown section {inner:?}"));
            };
            let method: Method = name
                .trim()
                .parse()
                .map_err(|e| ConfigError::Parse {
                    file: p.file.clone(),
                    line: lineno,
                    msg: format!("{e}"),
                })?;
            p.methods.push(MethodEntry {
                method,
                params: p.defaults.clone(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return p.err(lineno, format!("expected `key = value`, got {line:?}"));
        };
        let key = key.trim();
        let value = value.trim();
        if let Some(entry) = p.methods.last_mut() {
            if !METHOD_KEYS.contains(&key) {
                return p.err(
                    lineno,
                    format!("key {key:?} not allowed inside a [method] section"),
                );
            }
            if let Err(msg) = apply_method_key(&mut entry.params, key, value) {
                return p.err(lineno, msg);
            }
        } else if METHOD_KEYS.contains(&key) {
            if let Err(msg) = apply_method_key(&mut p.defaults, key, value) {
                return p.err(lineno, msg);
            }
        } else if GLOBAL_KEYS.contains(&key) {
            if let Some(canonical) = GLOBAL_KEYS.iter().find(|k| **k == key) {
                p.globals.insert(canonical, (lineno, value.to_string()));
            }
        } else {
            return p.err(lineno, format!("unknown key {key:?}"));
        }
    }

    finish(p)
}

fn finish(p: Parser<'_>) -> Result<ExperimentConfig, ConfigError> {
    let file = p.file.clone();
    let invalid = |msg: String| ConfigError::Invalid {
        file: file.clone(),
        msg,
    };
    let get = |key: &str| p.globals.get(key).map(|(_, v)| v.as_str());
    let parse_num = |key: &str, default: Option<&str>| -> Result<f64, ConfigError> {
        let Some(v) = get(key).or(default) else {
            return Err(invalid(format!("missing required key {key:?}")));
        };
        let (line, _) = p.globals.get(key).cloned().unwrap_or((0, String::new()));
        v.parse().map_err(|_| ConfigError::Parse {
            file: file.clone(),
            line,
            msg: format!("bad numeric value {v:?} for {key:?}"),
        })
    };

    let dataset = match get("dataset").unwrap_or("synthetic") {
        "synthetic" => DatasetSource::Synthetic {
            classes: parse_num("classes", Some("10"))? as usize,
            per_class: parse_num("per_class", Some("500"))? as usize,
            dim: parse_num("dim", Some("16"))? as usize,
            spread: parse_num("spread", Some("1.0"))?,
            seed: parse_num("data_seed", Some("1"))? as u64,
            train_fraction: parse_num("train_fraction", Some("0.8"))?,
            test_fraction: parse_num("test_fraction", Some("0.2"))?,
            split_seed: parse_num("split_seed", Some("2"))? as u64,
        },
        "idx" => {
            let path_of = |key: &str| -> Result<PathBuf, ConfigError> {
                get(key)
                    .map(PathBuf::from)
                    .ok_or_else(|| invalid(format!("idx dataset needs {key:?}")))
            };
            DatasetSource::Idx {
                train_images: path_of("train_images")?,
                train_labels: path_of("train_labels")?,
                test_images: path_of("test_images")?,
                test_labels: path_of("test_labels")?,
            }
        }
        other => return Err(invalid(format!("unknown dataset kind {other:?}"))),
    };

    if let DatasetSource::Synthetic {
        test_fraction, ..
    } = &dataset
    {
        if *test_fraction <= 0.0 {
            return Err(invalid("test_fraction must be > 0 for evaluation".into()));
        }
    }

    let kind = match get("noise").unwrap_or("none") {
        "none" => None,
        other => Some(other.parse::<NoiseKind>().map_err(|e| invalid(e.to_string()))?),
    };
    let noise = NoiseSetting {
        kind,
        ratio: parse_num("noise_ratio", Some("0"))?,
        seed: parse_num("noise_seed", Some("0"))? as u64,
        openset_source_seed: parse_num("openset_source_seed", Some("0"))? as u64,
        openset_source_spread: get("openset_source_spread")
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| invalid(format!("bad openset_source_spread {v:?}")))
            })
            .transpose()?,
        openset_images: get("openset_images").map(PathBuf::from),
        openset_labels: get("openset_labels").map(PathBuf::from),
        semantic_ensemble: parse_num("semantic_ensemble", Some("5"))? as usize,
        semantic_epochs: parse_num("semantic_epochs", Some("15"))? as u64,
    };
    if kind.is_some() && !(0.0..100.0).contains(&noise.ratio) {
        return Err(invalid(format!(
            "noise_ratio {} outside [0, 100)",
            noise.ratio
        )));
    }

    let repeats = parse_num("repeats", Some("1"))? as usize;
    if repeats == 0 {
        return Err(invalid("repeats must be >= 1".into()));
    }
    let trainer_seed = parse_num("trainer_seed", Some("0"))? as u64;
    let dump_dataset = matches!(get("dump_dataset"), Some("true") | Some("1"));

    if p.methods.is_empty() {
        return Err(invalid("no [method ...] sections defined".into()));
    }

    Ok(ExperimentConfig {
        dataset,
        noise,
        repeats,
        trainer_seed,
        methods: p.methods,
        dump_dataset,
    })
}
