//! Weak and strong feature augmentation.

use drill::augment::{self, AugmentConfig};
use drill::rng::{stream, Stream};

fn main() {
    let cfg = AugmentConfig::default();
    let mut rng = stream(0, Stream::Augment);
    let x: Vec<f64> = (1..=10).map(f64::from).collect();

    println!("input  {x:?}");
    println!("weak   {:.3?}", augment::weak_augment(&x, &cfg, &mut rng));
    println!("strong {:.3?}", augment::strong_augment(&x, &cfg, &mut rng));

    let n = 200_000;
    let masked = augment::weak_augment(&vec![1.0; n], &cfg, &mut rng)
        .iter()
        .filter(|v| **v == cfg.mask_value)
        .count();
    println!(
        "weak mask rate over {n} coordinates: {:.4} (configured {})",
        masked as f64 / n as f64,
        cfg.mask_fraction
    );
}
