//! Sensitivity of DRILL to beta.

use drill::experiment::{self, ExperimentSpec, SweepParam};
use drill::trainer::{TrainConfig, Variant};

fn main() -> drill::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let out = std::env::temp_dir().join("drill-example-sweep");
    let base = ExperimentSpec {
        train: TrainConfig {
            iterations,
            ..TrainConfig::default()
        },
        variants: vec![Variant::Drill],
        seeds: vec![0, 1],
        out_dir: out.clone(),
        save_checkpoints: false,
        ..ExperimentSpec::default()
    };
    let points = experiment::run_sweep(&base, SweepParam::Beta, &SweepParam::Beta.default_values())?;
    for p in &points {
        let s = p.report.summary(Variant::Drill).expect("one variant");
        println!("beta {:>6}: MAE {:.4} ± {:.4}", p.value, s.mae_mean, s.mae_std);
    }
    println!("summary in {}", out.join("sweep_summary.csv").display());
    Ok(())
}
