//! DRILL against its alignment ablations and the two baselines on one
//! benchmark, via the experiment runner.
//!
//! `cargo run --release --example ablation -- [family] [iterations]`

use drill::data::SyntheticFamily;
use drill::experiment::{self, DatasetSpec, ExperimentSpec};
use drill::trainer::{TrainConfig, Variant};

fn main() -> drill::Result<()> {
    let mut args = std::env::args().skip(1);
    let family: SyntheticFamily = args.next().as_deref().unwrap_or("friedman").parse()?;
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(800);

    let out = std::env::temp_dir().join("drill-example-ablation");
    let spec = ExperimentSpec {
        dataset: DatasetSpec::Synthetic {
            family,
            n_train: 1250,
            n_test: 500,
            noise_std: if family == SyntheticFamily::Friedman { 1.0 } else { 0.1 },
        },
        n_labeled: 100,
        train: TrainConfig {
            iterations,
            ..TrainConfig::default()
        },
        variants: Variant::ALL.to_vec(),
        seeds: vec![0, 1],
        out_dir: out.clone(),
        save_checkpoints: false,
        threads: None,
    };
    let report = experiment::run_experiment(&spec)?;
    for s in &report.summaries {
        println!(
            "{:<22} MAE {:.4} ± {:.4}  SRCC {:.4}",
            s.variant.name(),
            s.mae_mean,
            s.mae_std,
            s.srcc_mean
        );
    }
    println!("tables in {}", out.display());
    Ok(())
}
