//! Evaluation metrics: MAE, coefficient of determination and Spearman rank
//! correlation with average ranks for ties.

use serde::{Deserialize, Serialize};

use crate::data::SsrDataset;
use crate::dde::BucketSpec;
use crate::error::{Error, Result};
use crate::losses;
use crate::net::Mlp;
use crate::trainer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub r2: f64,
    pub srcc: f64,
    pub n: usize,
}

fn check_pair(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions, {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.len() < 2 {
        return Err(Error::invalid("metric needs at least two samples"));
    }
    if predictions.iter().chain(targets).any(|x| !x.is_finite()) {
        return Err(Error::invalid("metric inputs must be finite"));
    }
    Ok(())
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    losses::mae_loss(predictions, targets)
}

pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(predictions, targets)?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let total: f64 = targets.iter().map(|y| (mean - y).powi(2)).sum();
    if total == 0.0 {
        return Err(Error::UndefinedMetric("R² of constant targets".into()));
    }
    let residual: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(1.0 - residual / total)
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

pub fn srcc(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(predictions, targets)?;
    pearson(&average_ranks(predictions), &average_ranks(targets))
        .ok_or_else(|| Error::UndefinedMetric("SRCC with a constant sequence".into()))
}

/// All three metrics on a prediction/target pair.
pub fn report(predictions: &[f64], targets: &[f64]) -> Result<MetricReport> {
    Ok(MetricReport {
        mae: mae(predictions, targets)?,
        r2: r_squared(predictions, targets)?,
        srcc: srcc(predictions, targets)?,
        n: predictions.len(),
    })
}

/// Like [`report`], except that R² and SRCC come back as NaN when they are
/// undefined (constant predictions or targets) instead of failing.
pub fn report_or_nan(predictions: &[f64], targets: &[f64]) -> Result<MetricReport> {
    let lenient = |r: Result<f64>| match r {
        Err(Error::UndefinedMetric(_)) => Ok(f64::NAN),
        other => other,
    };
    Ok(MetricReport {
        mae: mae(predictions, targets)?,
        r2: lenient(r_squared(predictions, targets))?,
        srcc: lenient(srcc(predictions, targets))?,
        n: predictions.len(),
    })
}

/// Decodes every labeled row of `test` with the student (no augmentation)
/// and scores the predictions.
pub fn evaluate(student: &Mlp, spec: &BucketSpec, test: &SsrDataset) -> Result<MetricReport> {
    let rows = test.labeled_indices();
    if rows.is_empty() {
        return Err(Error::invalid("evaluation set has no labeled rows"));
    }
    let preds = trainer::predict_rows(student, spec, &test.select_rows(rows))?;
    report(&preds, &test.labeled_targets())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((r_squared(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            r_squared(&[1.0, 2.0], &[3.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn srcc_examples() {
        assert!((srcc(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&[3.0, 2.0, 1.0], &[10.0, 20.0, 30.0]).unwrap() + 1.0).abs() < 1e-15);
        let tied = srcc(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((tied - 0.866_025_403_784_438_6).abs() < 1e-12);
        assert!(matches!(
            srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn lenient_report_on_constant_predictions() {
        let r = report_or_nan(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.mae - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.r2, 0.0);
        assert!(r.srcc.is_nan());
        assert!(report_or_nan(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn srcc_rank_invariance() {
        let p = [0.3, -1.2, 4.4, 0.9, 2.2, 2.2];
        let t = [1.0, 0.5, 3.0, 2.0, 1.5, 2.5];
        let base = srcc(&p, &t).unwrap();
        let transformed: Vec<f64> = p.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        assert!((srcc(&transformed, &t).unwrap() - base).abs() < 1e-12);
    }
}
