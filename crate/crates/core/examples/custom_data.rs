//! Training from a delimited file with unlabeled rows, then checkpoint
//! evaluation on a second file.

use drill::data::{self, LabelColumn};
use drill::experiment::{self, DatasetSpec, ExperimentSpec};
use drill::trainer::{TrainConfig, Variant};

fn main() -> drill::Result<()> {
    let dir = std::env::temp_dir().join("drill-example-custom");
    std::fs::create_dir_all(&dir).map_err(|e| drill::Error::Io { path: dir.clone(), source: e })?;
    let train_csv = dir.join("train.csv");
    let eval_csv = dir.join("eval.csv");
    data::write_delimited(&data::make_synthetic("piecewise", 1200, 0.05, 1)?, &train_csv, b',')?;
    data::write_delimited(&data::make_synthetic("piecewise", 300, 0.05, 2)?, &eval_csv, b',')?;

    let spec = ExperimentSpec {
        dataset: DatasetSpec::File {
            path: train_csv,
            label_column: LabelColumn::Name("y".into()),
            delimiter: ',',
            n_test: 200,
        },
        n_labeled: 80,
        train: TrainConfig {
            iterations: 800,
            ..TrainConfig::default()
        },
        variants: vec![Variant::Drill],
        seeds: vec![0],
        out_dir: dir.join("run"),
        save_checkpoints: true,
        threads: None,
    };
    let report = experiment::run_experiment(&spec)?;
    let held_out = &report.results[0].metrics;
    println!("held-out split: MAE {:.4}  SRCC {:.4}", held_out.mae, held_out.srcc);

    let ck = dir.join("run/checkpoints/DRILL_seed0.ckpt");
    let m = experiment::evaluate_checkpoint(&ck, &eval_csv, &LabelColumn::Name("y".into()), b',')?;
    println!("second file ({} rows): MAE {:.4}  SRCC {:.4}", m.n, m.mae, m.srcc);
    Ok(())
}
