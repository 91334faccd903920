use drill::experiment::{self, DatasetSpec, DumpInput};
use drill::trainer::{self, TrainConfig};

#[test]
fn trained_sine_model_concentrates_mass() {
    let p = experiment::prepare(&DatasetSpec::default(), 50, 0).unwrap();
    let pair = trainer::train_drill(&p.train, &TrainConfig::default()).unwrap();
    let ck = pair.checkpoint(None);
    let n = 200;
    let mut top5_total = 0.0;
    for i in 0..n {
        let x = p.test.row(i).to_vec();
        let r = experiment::distribution_record(&ck, &x).unwrap();
        assert!((r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(r.bucket_values.len(), r.probs.len());
        assert_eq!(r.expectation, pair.predict(&x).unwrap());
        let mut sorted = r.probs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        top5_total += sorted[..5].iter().sum::<f64>();
    }
    let mean_top5 = top5_total / n as f64;
    assert!(mean_top5 > 0.5, "mean top-5 bucket mass {mean_top5}");
}

#[test]
fn dump_from_saved_checkpoint_applies_the_scaler() {
    let dir = tempfile::tempdir().unwrap();
    let p = experiment::prepare(&DatasetSpec::default(), 50, 1).unwrap();
    let cfg = TrainConfig {
        iterations: 100,
        ..TrainConfig::default()
    };
    let pair = trainer::train_drill(&p.train, &cfg).unwrap();
    let path = dir.path().join("m.ckpt");
    pair.checkpoint(Some(p.scaler.clone())).save(&path).unwrap();

    let standardized = p.test.row(3).to_vec();
    let raw: Vec<f64> = standardized
        .iter()
        .zip(p.scaler.mean().iter().zip(p.scaler.std()))
        .map(|(z, (m, s))| z * s + m)
        .collect();
    let r = experiment::dump_distribution(&path, &DumpInput::Inline(raw)).unwrap();
    assert!((r.expectation - pair.predict(&standardized).unwrap()).abs() < 1e-9);
    assert!((r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}
