//! End-to-end tests of the experiment runner and the `lec` binary.

use std::path::Path;
use std::process::Command;

use lec_cli::runner::{metrics_csv, run_experiment, sweep, SweepParam, METRICS_HEADER};
use lec_cli::{parse_config, parse_config_str};

const SMALL: &str = "\
dataset = synthetic
classes = 3
per_class = 40
dim = 4
spread = 0.8
data_seed = 1
train_fraction = 0.7
test_fraction = 0.3
split_seed = 2
noise = sym
noise_ratio = 40
noise_seed = 3
repeats = 2
trainer_seed = 9
epochs = 4
warmup = 1
batch_size = 32
learning_rate = 0.003
hidden = 12
dropout = 0.2
m = 3

[method standard]
[method ltec]
";

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn run_experiment_writes_expected_artifacts() {
    let cfg = parse_config_str(SMALL, "small.conf").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let result = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(result.summaries.len(), 2);

    for name in [
        "manifest.txt",
        "summary.csv",
        "standard_r0.csv",
        "standard_r1.csv",
        "ltec_r0.csv",
        "ltec_r1.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let csv = read(&dir.path().join("ltec_r0.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER);
    assert_eq!(lines.count(), 4, "one row per epoch");
    let summary = read(&dir.path().join("summary.csv"));
    assert!(summary.starts_with("method,repeats,"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn rerun_is_byte_identical_and_manifest_reproduces() {
    let cfg = parse_config_str(SMALL, "small.conf").unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    for name in ["standard_r0.csv", "ltec_r1.csv", "summary.csv"] {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)));
    }

    // The manifest alone reproduces every CSV.
    let manifest = a.path().join("manifest.txt");
    let re_cfg = parse_config(&manifest).unwrap();
    let c = tempfile::tempdir().unwrap();
    run_experiment(&re_cfg, c.path()).unwrap();
    for name in ["standard_r0.csv", "standard_r1.csv", "ltec_r0.csv", "ltec_r1.csv", "summary.csv"]
    {
        assert_eq!(
            read(&a.path().join(name)),
            read(&c.path().join(name)),
            "{name} differs after manifest rerun"
        );
    }
}

#[test]
fn repeats_share_noise_across_methods_but_not_across_repeats() {
    let text = SMALL.replace("[method standard]", "dump_dataset = true\n\n[method standard]");
    let cfg = parse_config_str(&text, "small.conf").unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, dir.path()).unwrap();
    let r0 = read(&dir.path().join("dataset_r0.txt"));
    let r1 = read(&dir.path().join("dataset_r1.txt"));
    assert_ne!(r0, r1, "repeats use distinct noise seeds");
    let rows = lec_core::dataset::parse_columnar(r0.as_bytes()).unwrap();
    let noisy = rows.iter().filter(|r| r.3).count();
    assert_eq!(noisy, (0.4 * rows.len() as f64).floor() as usize);
}

#[test]
fn eps_sweep_reuses_identical_noisy_datasets() {
    let text = SMALL.replace("[method standard]", "dump_dataset = true\n\n[method standard]");
    let cfg = parse_config_str(&text, "small.conf").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let results = sweep(
        &cfg,
        SweepParam::Eps,
        &["0.9".into(), "1.0".into()],
        dir.path(),
    )
    .unwrap();
    assert_eq!(results.len(), 2);
    let a = read(&dir.path().join("eps_0.9/dataset_r0.txt"));
    let b = read(&dir.path().join("eps_1.0/dataset_r0.txt"));
    assert_eq!(a, b, "grid points must corrupt identically");
    let summary = read(&dir.path().join("sweep_summary.csv"));
    assert!(summary.starts_with("param,value,method,"));
    // 2 grid points x 2 methods
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn m_sweep_runs_each_grid_point() {
    let cfg = parse_config_str(SMALL, "small.conf").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let results = sweep(
        &cfg,
        SweepParam::M,
        &["1".into(), "3".into(), "5".into(), "inf".into()],
        dir.path(),
    )
    .unwrap();
    assert_eq!(results.len(), 4);
    for label in ["m_1", "m_3", "m_5", "m_inf"] {
        assert!(dir.path().join(label).join("summary.csv").exists());
    }
}

#[test]
fn metrics_csv_marks_undefined_precision_as_nan() {
    use lec_core::metrics::EpochMetrics;
    use lec_core::trainer::{Method, RunLog};
    let log = RunLog {
        method: Method::Ltec,
        epochs: vec![EpochMetrics {
            epoch: 1,
            test_accuracy: 0.5,
            label_precision: None,
            recall: 0.0,
            examples_used: 0.0,
            skipped_updates: 3,
        }],
        final_accuracy: 0.5,
        peak_accuracy: 0.5,
        warnings: Vec::new(),
        filter_diag: Vec::new(),
    };
    let csv = metrics_csv(&log);
    assert!(csv.lines().nth(1).unwrap().contains("NaN"));
}

/// Two tiny IDX files: labels magic 0x801, images magic 0x803.
fn write_idx_pair(dir: &Path, prefix: &str, labels: &[u8], pixel: impl Fn(usize) -> u8) {
    let n = labels.len() as u32;
    let mut lbl = vec![0x00, 0x00, 0x08, 0x01];
    lbl.extend_from_slice(&n.to_be_bytes());
    lbl.extend_from_slice(labels);
    std::fs::write(dir.join(format!("{prefix}-labels.idx")), lbl).unwrap();
    let mut img = vec![0x00, 0x00, 0x08, 0x03];
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&2u32.to_be_bytes());
    img.extend_from_slice(&2u32.to_be_bytes());
    for i in 0..labels.len() * 4 {
        img.push(pixel(i));
    }
    std::fs::write(dir.join(format!("{prefix}-images.idx")), img).unwrap();
}

#[test]
fn idx_datasets_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..40u8).map(|i| i % 2).collect();
    write_idx_pair(dir.path(), "train", &labels, |i| if (i / 4) % 2 == 0 { 10 } else { 240 });
    write_idx_pair(dir.path(), "test", &labels[..20], |i| if (i / 4) % 2 == 0 { 12 } else { 235 });
    let config = format!(
        "dataset = idx
train_images = {d}/train-images.idx
train_labels = {d}/train-labels.idx
test_images = {d}/test-images.idx
test_labels = {d}/test-labels.idx
noise = sym
noise_ratio = 20
noise_seed = 1
repeats = 1
epochs = 3
warmup = 1
batch_size = 16
hidden = 8
dropout = 0.1

[method self]
",
        d = dir.path().display()
    );
    let cfg = parse_config_str(&config, "idx.conf").unwrap();
    let out = tempfile::tempdir().unwrap();
    let result = run_experiment(&cfg, out.path()).unwrap();
    assert_eq!(result.summaries.len(), 1);
    assert!(out.path().join("self_r0.csv").exists());
}

#[test]
fn binary_runs_and_rejects_bad_configs() {
    let exe = env!("CARGO_BIN_EXE_lec");
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    std::fs::write(&conf, SMALL).unwrap();
    let out = dir.path().join("out");
    let ok = Command::new(exe)
        .args([
            "run",
            conf.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            "2",
        ])
        .output()
        .unwrap();
    assert!(ok.status.success(), "stderr: {}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("summary.csv").exists());

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, SMALL.replace("[method ltec]", "[method bogus]")).unwrap();
    let fail = Command::new(exe)
        .args(["run", bad.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!fail.status.success());
    let stderr = String::from_utf8_lossy(&fail.stderr);
    assert!(stderr.contains("bad.conf:"), "stderr: {stderr}");
    assert!(stderr.contains("bogus"));
}
