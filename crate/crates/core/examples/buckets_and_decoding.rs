//! Buckets, softmax, expectation decoding and the spread statistic.

use drill::dde::{self, BucketDistribution, BucketSpec};

fn main() -> drill::Result<()> {
    let spec = BucketSpec::new(1.0, 5.0, 9)?;
    println!("values {:?} (capacity {})", spec.values(), spec.capacity());

    let logits = vec![-2.0, -1.0, 0.5, 2.0, 3.0, 2.0, 0.5, -1.0, -2.0];
    let dist = BucketDistribution::from_logits(logits)?;
    let probs: Vec<String> = dist.probs().iter().map(|p| format!("{p:.3}")).collect();
    println!("probs  [{}]", probs.join(", "));
    println!("expectation {:.4}", dde::expectation(&dist, &spec)?);
    println!("normalized std {:.4}", dde::normalized_std(&dist, &spec)?);

    for label in [0.2, 1.24, 1.25, 3.1, 7.0] {
        println!("target bucket for {label}: {}", dde::target_bucket(label, &spec)?);
    }

    let uniform = BucketDistribution::uniform(spec.count())?;
    let point = BucketDistribution::one_hot(spec.count(), 2)?;
    println!(
        "uniform: mean {:.2}, std {:.4}; one-hot: mean {:.2}, std {:.1}",
        dde::expectation(&uniform, &spec)?,
        dde::normalized_std(&uniform, &spec)?,
        dde::expectation(&point, &spec)?,
        dde::normalized_std(&point, &spec)?,
    );
    Ok(())
}
