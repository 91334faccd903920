//! MAE, R² and Spearman correlation with tied ranks.

use drill::metrics;

fn main() -> drill::Result<()> {
    let targets = [1.0, 2.0, 3.0, 4.0, 5.0];
    let preds = [1.2, 1.9, 3.4, 3.4, 4.6];
    let r = metrics::report(&preds, &targets)?;
    println!("MAE {:.4}  R2 {:.4}  SRCC {:.4}", r.mae, r.r2, r.srcc);
    println!("ranks of {preds:?}: {:?}", metrics::average_ranks(&preds));
    println!("tied SRCC {:.5}", metrics::srcc(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0])?);
    match metrics::srcc(&[2.0, 2.0, 2.0], &targets[..3]) {
        Err(e) => println!("constant predictions: {e}"),
        Ok(v) => println!("unexpected {v}"),
    }
    Ok(())
}
