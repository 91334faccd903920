//! Saves a trained student and prints the bucket distribution it assigns to
//! one test input.

use drill::experiment::{self, DatasetSpec, DumpInput};
use drill::trainer::{self, TrainConfig};

fn main() -> drill::Result<()> {
    let data = experiment::prepare(&DatasetSpec::default(), 50, 0)?;
    let cfg = TrainConfig {
        iterations: 1500,
        ..TrainConfig::default()
    };
    let pair = trainer::train_drill(&data.train, &cfg)?;
    let path = std::env::temp_dir().join("drill-example.ckpt");
    pair.checkpoint(Some(data.scaler.clone())).save(&path)?;

    // The checkpoint expects raw features; undo the standardization.
    let z = data.test.row(0);
    let raw: Vec<f64> = z
        .iter()
        .zip(data.scaler.mean().iter().zip(data.scaler.std()))
        .map(|(z, (m, s))| z * s + m)
        .collect();
    let record = experiment::dump_distribution(&path, &DumpInput::Inline(raw))?;

    let mut top: Vec<(f64, f64)> = record.bucket_values.iter().copied().zip(record.probs.iter().copied()).collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("true label {:.4}, expectation {:.4}", data.test.label(0).unwrap_or(f64::NAN), record.expectation);
    for (value, p) in top.iter().take(8) {
        println!("  bucket {value:>8.4}  p {p:.4}  {}", "#".repeat((p * 200.0) as usize));
    }
    println!("checkpoint at {}", path.display());
    Ok(())
}
