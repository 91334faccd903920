//! Discrete distribution estimation: label buckets, softmax normalization and
//! expectation decoding.
//!
//! Bucket indices are 0-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `count` evenly spaced label values spanning `[label_min, label_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    count: usize,
    capacity: f64,
    values: Vec<f64>,
    label_min: f64,
}

impl BucketSpec {
    /// Builds the bucket grid. The first value is exactly `label_min` and the
    /// last exactly `label_max`; the step is `(label_max - label_min) / (count - 1)`.
    pub fn new(label_min: f64, label_max: f64, count: usize) -> Result<Self> {
        if !label_min.is_finite() || !label_max.is_finite() {
            return Err(Error::invalid(format!(
                "bucket bounds must be finite, got [{label_min}, {label_max}]"
            )));
        }
        if label_max <= label_min {
            return Err(Error::invalid(format!(
                "label_max ({label_max}) must exceed label_min ({label_min})"
            )));
        }
        if count < 2 {
            return Err(Error::invalid(format!("bucket count must be >= 2, got {count}")));
        }
        let capacity = (label_max - label_min) / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count)
            .map(|i| label_min + i as f64 * capacity)
            .collect();
        values[count - 1] = label_max;
        Ok(Self {
            count,
            capacity,
            values,
            label_min,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Label units per bucket.
    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label_min(&self) -> f64 {
        self.label_min
    }

    pub fn label_max(&self) -> f64 {
        self.values[self.count - 1]
    }

    /// Bucket value rescaled to `[0, 1]`.
    pub fn position(&self, i: usize) -> f64 {
        (self.values[i] - self.label_min) / (self.label_max() - self.label_min)
    }

    pub(crate) fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.label_min, self.label_max())
    }
}

/// Alias matching the operation name used by the experiment tooling.
pub fn make_buckets(label_min: f64, label_max: f64, count: usize) -> Result<BucketSpec> {
    BucketSpec::new(label_min, label_max, count)
}

/// A probability vector over buckets, optionally with the logits it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketDistribution {
    logits: Option<Vec<f64>>,
    probs: Vec<f64>,
}

impl BucketDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        let probs = softmax(&logits)?;
        Ok(Self {
            logits: Some(logits),
            probs,
        })
    }

    /// Wraps an existing probability vector; it must be normalized within 1e-9.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            logits: None,
            probs,
        })
    }

    /// Point mass on bucket `index`.
    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::invalid(format!(
                "one-hot index {index} out of range for {len} buckets"
            )));
        }
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Self::from_probs(probs)
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::from_logits(vec![0.0; len])
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax input contains non-finite values"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax without validation, for the hot path. Input must be finite.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn check_len(dist: &BucketDistribution, spec: &BucketSpec) -> Result<()> {
    if dist.len() != spec.count() {
        return Err(Error::invalid(format!(
            "distribution has {} buckets, spec has {}",
            dist.len(),
            spec.count()
        )));
    }
    Ok(())
}

/// Decoded score `sum_i p_i * b_i`, clamped to the bucket range against
/// round-off.
pub fn expectation(dist: &BucketDistribution, spec: &BucketSpec) -> Result<f64> {
    check_len(dist, spec)?;
    Ok(decode(dist.probs(), spec))
}

pub(crate) fn decode(probs: &[f64], spec: &BucketSpec) -> f64 {
    let raw: f64 = probs.iter().zip(spec.values()).map(|(p, b)| p * b).sum();
    spec.clamp(raw)
}

/// Index of the bucket nearest `label` after clamping it into range. Exact
/// midpoints go to the lower index.
pub fn target_bucket(label: f64, spec: &BucketSpec) -> Result<usize> {
    if !label.is_finite() {
        return Err(Error::invalid(format!("non-finite label {label}")));
    }
    Ok(nearest_bucket(label, spec))
}

pub(crate) fn nearest_bucket(label: f64, spec: &BucketSpec) -> usize {
    let y = spec.clamp(label);
    let values = spec.values();
    let last = spec.count() - 1;
    let lo = (((y - spec.label_min()) / spec.capacity()).floor().max(0.0) as usize).min(last);
    // The floor estimate can be off by one under round-off; scan its neighbours.
    let from = lo.saturating_sub(1);
    let to = (lo + 2).min(last);
    let mut best = from;
    let mut best_gap = (y - values[from]).abs();
    for (k, v) in values.iter().enumerate().take(to + 1).skip(from + 1) {
        let gap = (y - v).abs();
        if gap < best_gap {
            best = k;
            best_gap = gap;
        }
    }
    best
}

/// Standard deviation of the distribution over bucket positions rescaled to
/// `[0, 1]`; always within `[0, 0.5]`.
pub fn normalized_std(dist: &BucketDistribution, spec: &BucketSpec) -> Result<f64> {
    check_len(dist, spec)?;
    Ok(spread(dist.probs(), spec))
}

pub(crate) fn spread(probs: &[f64], spec: &BucketSpec) -> f64 {
    let mean: f64 = probs
        .iter()
        .enumerate()
        .map(|(i, p)| p * spec.position(i))
        .sum();
    let var: f64 = probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = spec.position(i) - mean;
            p * d * d
        })
        .sum();
    var.max(0.0).sqrt().min(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn buckets_unit_grid() {
        let spec = make_buckets(0.0, 4.0, 5).unwrap();
        assert_eq!(spec.values(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(spec.capacity(), 1.0);
    }

    #[test]
    fn buckets_default_score_range() {
        let spec = make_buckets(1.0, 5.0, 200).unwrap();
        assert_eq!(spec.values()[0], 1.0);
        assert_eq!(spec.values()[199], 5.0);
        assert!((spec.capacity() - 4.0 / 199.0).abs() < 1e-15);
        assert!(spec.values().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn buckets_sofa_range() {
        let spec = make_buckets(0.0, 24.0, 100).unwrap();
        assert!((spec.capacity() - 0.242_424_242_424).abs() < 1e-9);
    }

    #[test]
    fn buckets_reject_bad_input() {
        assert!(make_buckets(0.0, 1.0, 1).is_err());
        assert!(make_buckets(1.0, 1.0, 5).is_err());
        assert!(make_buckets(2.0, 1.0, 5).is_err());
        assert!(make_buckets(f64::NAN, 1.0, 5).is_err());
        assert!(make_buckets(0.0, f64::INFINITY, 5).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 4]).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));

        let p = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);

        let big = softmax(&[1000.0, 1001.0]).unwrap();
        let small = softmax(&[0.0, 1.0]).unwrap();
        assert!((big[0] - small[0]).abs() < 1e-12);

        assert!(softmax(&[]).is_err());
        assert!(softmax(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn expectation_examples() {
        let spec = make_buckets(0.0, 4.0, 5).unwrap();
        let uniform = BucketDistribution::uniform(5).unwrap();
        assert!((expectation(&uniform, &spec).unwrap() - 2.0).abs() < 1e-12);

        let spec4 = make_buckets(0.0, 3.0, 4).unwrap();
        let d = BucketDistribution::from_probs(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((expectation(&d, &spec4).unwrap() - 2.0).abs() < 1e-12);

        for i in 0..5 {
            let d = BucketDistribution::one_hot(5, i).unwrap();
            assert_eq!(expectation(&d, &spec).unwrap(), spec.values()[i]);
        }

        assert!(expectation(&uniform, &spec4).is_err());
    }

    #[test]
    fn target_bucket_examples() {
        let spec = make_buckets(0.0, 4.0, 5).unwrap();
        assert_eq!(target_bucket(2.4, &spec).unwrap(), 2);
        assert_eq!(target_bucket(3.0, &spec).unwrap(), 3);
        assert_eq!(target_bucket(-7.0, &spec).unwrap(), 0);
        assert_eq!(target_bucket(99.0, &spec).unwrap(), 4);
        assert!(target_bucket(f64::NAN, &spec).is_err());

        let two = make_buckets(0.0, 1.0, 2).unwrap();
        assert_eq!(target_bucket(0.5, &two).unwrap(), 0);
    }

    #[test]
    fn normalized_std_examples() {
        let spec5 = make_buckets(0.0, 4.0, 5).unwrap();
        let one_hot = BucketDistribution::one_hot(5, 3).unwrap();
        assert_eq!(normalized_std(&one_hot, &spec5).unwrap(), 0.0);

        let spec2 = make_buckets(0.0, 1.0, 2).unwrap();
        let half = BucketDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        assert!((normalized_std(&half, &spec2).unwrap() - 0.5).abs() < 1e-15);

        let uniform = BucketDistribution::uniform(5).unwrap();
        assert!((normalized_std(&uniform, &spec5).unwrap() - 0.125f64.sqrt()).abs() < 1e-12);
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-30.0f64..30.0, 1..64)
    }

    proptest! {
        #[test]
        fn softmax_is_normalized(logits in logits_strategy()) {
            let p = softmax(&logits).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x > 0.0 && *x <= 1.0));
        }

        #[test]
        fn softmax_shift_invariant(logits in logits_strategy(), k in -50.0f64..50.0) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|x| x + k).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn bucket_round_trip(lo in -100.0f64..100.0, width in 0.01f64..500.0, count in 2usize..400) {
            let spec = make_buckets(lo, lo + width, count).unwrap();
            for i in 0..count {
                prop_assert_eq!(target_bucket(spec.values()[i], &spec).unwrap(), i);
                let d = BucketDistribution::one_hot(count, i).unwrap();
                let y = expectation(&d, &spec).unwrap();
                prop_assert_eq!(y, spec.values()[i]);
                prop_assert_eq!(target_bucket(y, &spec).unwrap(), i);
            }
        }

        #[test]
        fn nearest_bucket_matches_brute_force(label in -10.0f64..30.0, count in 2usize..50) {
            let spec = make_buckets(0.0, 20.0, count).unwrap();
            let y = label.clamp(0.0, 20.0);
            let mut best = 0;
            for k in 1..count {
                if (y - spec.values()[k]).abs() < (y - spec.values()[best]).abs() {
                    best = k;
                }
            }
            prop_assert_eq!(target_bucket(label, &spec).unwrap(), best);
        }

        #[test]
        fn spread_is_bounded(logits in prop::collection::vec(-20.0f64..20.0, 2..64)) {
            let n = logits.len();
            let spec = make_buckets(-3.0, 7.0, n).unwrap();
            let d = BucketDistribution::from_logits(logits).unwrap();
            let s = normalized_std(&d, &spec).unwrap();
            prop_assert!((0.0..=0.5).contains(&s));
            let y = expectation(&d, &spec).unwrap();
            prop_assert!(y >= spec.label_min() && y <= spec.label_max());
        }
    }
}
