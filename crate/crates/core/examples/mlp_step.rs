//! One forward/backward pass and a momentum SGD step on the bucket MLP,
//! checked against a finite difference.

use drill::dde::BucketSpec;
use drill::losses;
use drill::net::{sgd_step, Mlp, OptimizerState};
use drill::rng::{stream, Stream};
use ndarray::array;

fn loss(model: &Mlp, x: &ndarray::Array2<f64>, spec: &BucketSpec, y: f64) -> f64 {
    let t = model.forward_trace(x.view()).unwrap();
    losses::expectation_mae_with_grad(&t.prob_row(0).to_vec(), spec, y).0
}

fn main() -> drill::Result<()> {
    let spec = BucketSpec::new(0.0, 1.0, 11)?;
    let mut model = Mlp::new(&[2, 8, spec.count()], &mut stream(0, Stream::Init))?;
    let x = array![[0.3, -0.7]];
    let y = 0.9;

    let trace = model.forward_trace(x.view())?;
    let (value, g) = losses::expectation_mae_with_grad(&trace.prob_row(0).to_vec(), &spec, y);
    let dlogits = ndarray::Array2::from_shape_vec((1, g.len()), g).expect("one row");
    let tape = model.backward(&trace, dlogits.view())?;
    println!("loss {value:.5}, gradient norm {:.5}", tape.norm());

    let flat = tape.flat();
    let k = (0..flat.len()).max_by(|&a, &b| flat[a].abs().total_cmp(&flat[b].abs())).expect("parameters");
    let mut theta = model.flat_params();
    let h = 1e-5;
    theta[k] += h;
    let mut probe = model.clone();
    probe.set_flat_params(&theta)?;
    let up = loss(&probe, &x, &spec, y);
    theta[k] -= 2.0 * h;
    probe.set_flat_params(&theta)?;
    let down = loss(&probe, &x, &spec, y);
    println!("parameter {k}: analytic {:.8}, central difference {:.8}", flat[k], (up - down) / (2.0 * h));

    let mut opt = OptimizerState::new(&model, 0.05, 0.9, 1e-4)?;
    for step in 0..5 {
        let trace = model.forward_trace(x.view())?;
        let (value, g) = losses::expectation_mae_with_grad(&trace.prob_row(0).to_vec(), &spec, y);
        let dlogits = ndarray::Array2::from_shape_vec((1, g.len()), g).expect("one row");
        let tape = model.backward(&trace, dlogits.view())?;
        sgd_step(&mut model, &tape, &mut opt)?;
        println!("step {step}: loss {value:.5}");
    }
    Ok(())
}
