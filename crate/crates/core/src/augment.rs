//! Weak and strong augmentation for feature vectors.
//!
//! Weak: one random-masking pass. Strong: `strong_rounds` masking passes
//! followed by additive zero-mean Gaussian noise. Masking is an independent
//! Bernoulli draw per coordinate; masked coordinates take `mask_value`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Per-pass masking probability, in `[0, 1)`.
    pub mask_fraction: f64,
    /// Number of masking passes in the strong augmentation.
    pub strong_rounds: usize,
    /// Variance of the additive noise in the strong augmentation.
    pub noise_variance: f64,
    pub mask_value: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mask_fraction: 0.05,
            strong_rounds: 2,
            noise_variance: 0.02,
            mask_value: 0.0,
        }
    }
}

impl AugmentConfig {
    /// No masking, no noise.
    pub fn identity() -> Self {
        Self {
            mask_fraction: 0.0,
            strong_rounds: 1,
            noise_variance: 0.0,
            mask_value: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::config(
                "augment.mask_fraction",
                format!("must be in [0, 1), got {}", self.mask_fraction),
            ));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::config(
                "augment.noise_variance",
                format!("must be finite and >= 0, got {}", self.noise_variance),
            ));
        }
        if self.strong_rounds == 0 {
            return Err(Error::config("augment.strong_rounds", "must be positive"));
        }
        if !self.mask_value.is_finite() {
            return Err(Error::config("augment.mask_value", "must be finite"));
        }
        Ok(())
    }
}

fn mask_pass<R: Rng + ?Sized>(xs: &mut [f64], cfg: &AugmentConfig, rng: &mut R) {
    if cfg.mask_fraction <= 0.0 {
        return;
    }
    for x in xs {
        if rng.random::<f64>() < cfg.mask_fraction {
            *x = cfg.mask_value;
        }
    }
}

fn add_noise<R: Rng + ?Sized>(xs: &mut [f64], cfg: &AugmentConfig, rng: &mut R) {
    if cfg.noise_variance <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, cfg.noise_variance.sqrt()).expect("validated variance");
    for x in xs {
        *x += normal.sample(rng);
    }
}

pub fn weak_augment<R: Rng + ?Sized>(input: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let mut out = input.to_vec();
    weak_in_place(&mut out, cfg, rng);
    out
}

pub fn strong_augment<R: Rng + ?Sized>(input: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let mut out = input.to_vec();
    strong_in_place(&mut out, cfg, rng);
    out
}

pub(crate) fn weak_in_place<R: Rng + ?Sized>(xs: &mut [f64], cfg: &AugmentConfig, rng: &mut R) {
    mask_pass(xs, cfg, rng);
}

pub(crate) fn strong_in_place<R: Rng + ?Sized>(xs: &mut [f64], cfg: &AugmentConfig, rng: &mut R) {
    for _ in 0..cfg.strong_rounds {
        mask_pass(xs, cfg, rng);
    }
    add_noise(xs, cfg, rng);
}

/// Applies the weak augmentation to every row.
pub fn weak_batch<R: Rng + ?Sized>(batch: &Array2<f64>, cfg: &AugmentConfig, rng: &mut R) -> Array2<f64> {
    let mut out = batch.as_standard_layout().into_owned();
    for mut row in out.rows_mut() {
        weak_in_place(row.as_slice_mut().expect("standard layout"), cfg, rng);
    }
    out
}

/// Applies the strong augmentation to every row.
pub fn strong_batch<R: Rng + ?Sized>(batch: &Array2<f64>, cfg: &AugmentConfig, rng: &mut R) -> Array2<f64> {
    let mut out = batch.as_standard_layout().into_owned();
    for mut row in out.rows_mut() {
        strong_in_place(row.as_slice_mut().expect("standard layout"), cfg, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| 1.0 + i as f64).collect()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let cfg = AugmentConfig {
            mask_fraction: 0.0,
            ..AugmentConfig::default()
        };
        let x = ramp(50);
        assert_eq!(weak_augment(&x, &cfg, &mut stream(1, Stream::Augment)), x);
    }

    #[test]
    fn strong_identity_config() {
        let x = ramp(50);
        let y = strong_augment(&x, &AugmentConfig::identity(), &mut stream(1, Stream::Augment));
        assert_eq!(x, y);
    }

    #[test]
    fn near_one_fraction_masks_almost_everything() {
        let cfg = AugmentConfig {
            mask_fraction: 0.999,
            ..AugmentConfig::default()
        };
        let y = weak_augment(&ramp(10_000), &cfg, &mut stream(2, Stream::Augment));
        let masked = y.iter().filter(|v| **v == 0.0).count();
        assert!(masked > 9_950);
    }

    #[test]
    fn weak_mask_count_is_binomial() {
        let cfg = AugmentConfig::default();
        let y = weak_augment(&ramp(10_000), &cfg, &mut stream(3, Stream::Augment));
        let masked = y.iter().filter(|v| **v == 0.0).count() as f64;
        let sigma = (10_000.0f64 * 0.05 * 0.95).sqrt();
        assert!((masked - 500.0).abs() < 3.0 * sigma, "masked {masked}");
    }

    #[test]
    fn two_rounds_survival_fraction() {
        let cfg = AugmentConfig {
            mask_fraction: 0.3,
            strong_rounds: 2,
            noise_variance: 0.0,
            mask_value: 0.0,
        };
        let n = 200_000;
        let y = strong_augment(&ramp(n), &cfg, &mut stream(4, Stream::Augment));
        let survived = y.iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
        let expected = 0.7 * 0.7;
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((survived - expected).abs() < 4.0 * sigma, "survived {survived}");
    }

    #[test]
    fn noise_variance_matches() {
        let cfg = AugmentConfig {
            mask_fraction: 0.0,
            strong_rounds: 1,
            noise_variance: 0.02,
            mask_value: 0.0,
        };
        let x = vec![0.5; 100_000];
        let y = strong_augment(&x, &cfg, &mut stream(5, Stream::Augment));
        let diffs: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((var - 0.02).abs() < 0.002, "variance {var}");
    }

    #[test]
    fn reproducible_and_length_preserving() {
        let cfg = AugmentConfig::default();
        let x = ramp(37);
        let a = strong_augment(&x, &cfg, &mut stream(9, Stream::Augment));
        let b = strong_augment(&x, &cfg, &mut stream(9, Stream::Augment));
        assert_eq!(a.len(), 37);
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(weak_augment(&x, &cfg, &mut stream(9, Stream::Augment)).len(), 37);
    }

    #[test]
    fn validate_rejects_bad_config() {
        let mut cfg = AugmentConfig::default();
        cfg.mask_fraction = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.noise_variance = -1.0;
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
