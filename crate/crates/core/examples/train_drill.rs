//! Trains DRILL on the sine benchmark and scores the student.
//!
//! `cargo run --release --example train_drill -- [iterations] [seed]`

use drill::experiment::{self, DatasetSpec};
use drill::trainer::{self, TrainConfig};

fn main() -> drill::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let data = experiment::prepare(&DatasetSpec::default(), 50, seed)?;
    println!(
        "train pool {} rows ({} labeled), test {} rows",
        data.train.len(),
        data.train.labeled_indices().len(),
        data.test.len()
    );
    let cfg = TrainConfig {
        iterations,
        seed,
        ..TrainConfig::default()
    };
    let pair = trainer::train_drill(&data.train, &cfg)?;
    for r in pair.history.iter().step_by((iterations / 6).max(1)) {
        println!(
            "iter {:>5}  L_T {:.4}  L_S {:.4}  L_DDA {:.4}  R {:.3}",
            r.iteration, r.teacher_loss, r.student_loss, r.alignment_loss, r.r_factor
        );
    }
    let m = pair.evaluate(&data.test)?;
    println!("test MAE {:.4}  R2 {:.4}  SRCC {:.4}", m.mae, m.r2, m.srcc);
    Ok(())
}
