use lec_core::dataset::{synth_clusters, SplitSpec};
use lec_core::filtering::EnsembleSize;
use lec_core::noise::apply_sym;
use lec_core::trainer::{train, Method, RunLog, TrainConfig, TrainSeeds};

fn bench_data(ratio: f64, noise_seed: u64) -> (lec_core::LabeledDataset, lec_core::LabeledDataset) {
    let data = synth_clusters(10, 500, 16, 1.0, 1).unwrap();
    let (train_clean, test) = data
        .split(&SplitSpec { train_fraction: 0.8, test_fraction: 0.2, seed: 2 })
        .unwrap();
    (apply_sym(&train_clean, ratio, noise_seed).unwrap(), test)
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym: f64 = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        num += (i as f64 - xm) * (y - ym);
        den += (i as f64 - xm) * (i as f64 - xm);
    }
    num / den
}

fn run_m(nbase: u64, tbase: u64, ratio: f64, assumed: f64, seed: u64, method: Method, m: EnsembleSize) -> RunLog {
    let (noisy, test) = bench_data(ratio, nbase + seed);
    let cfg = TrainConfig {
        assumed_ratio: assumed,
        ensemble: m,
        seeds: TrainSeeds::from_base(tbase + seed),
        ..TrainConfig::with_method(method)
    };
    train(&noisy, &test, &cfg).unwrap()
}

fn main() {
    for nbase in [23u64, 57, 101] {
        let tbase = 10;
        let mut slopes = Vec::new();
        for seed in 0..4u64 {
            let log = run_m(nbase, tbase, 20.0, 20.0, seed, Method::Ltec, EnsembleSize::Finite(5));
            let recalls: Vec<f64> = log.epochs.iter().filter(|e| e.epoch > 10).map(|e| e.recall).collect();
            slopes.push(slope(&recalls));
        }
        println!("nbase {nbase} c7a slopes {:?} mean {:.6}", slopes.iter().map(|s| (s * 1e6).round() / 1e6).collect::<Vec<_>>(), slopes.iter().sum::<f64>() / 4.0);
        let mut ok = 0;
        for seed in 0..4u64 {
            let lt_e = run_m(nbase, tbase, 60.0, 60.0, seed, Method::Ltec, EnsembleSize::Finite(5)).final_accuracy;
            let lt_u = run_m(nbase, tbase, 60.0, 54.0, seed, Method::Ltec, EnsembleSize::Finite(5)).final_accuracy;
            let ct_e = run_m(nbase, tbase, 60.0, 60.0, seed, Method::CoTeaching, EnsembleSize::Finite(5)).final_accuracy;
            let ct_u = run_m(nbase, tbase, 60.0, 54.0, seed, Method::CoTeaching, EnsembleSize::Finite(5)).final_accuracy;
            let good = (lt_e - lt_u) < (ct_e - ct_u);
            println!("  c9 seed {seed}: ltec {:+.4} cot {:+.4} ok {good}", lt_e - lt_u, ct_e - ct_u);
            if good { ok += 1; }
        }
        println!("nbase {nbase}: c9 {ok}/4");
    }
}
