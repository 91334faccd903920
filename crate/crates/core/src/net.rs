//! A small fully connected network with ReLU hidden layers and a linear
//! output layer, trained with momentum SGD.
//!
//! Forward passes over a batch return a [`ForwardTrace`] holding the layer
//! activations; [`Mlp::backward`] consumes the trace together with the loss
//! gradient at the logits and produces a [`GradientTape`].

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::dde::{self, BucketDistribution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`, row-major.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Feedforward backbone. Hidden layers use ReLU; the last layer is linear and
/// produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid("an MLP needs at least an input and an output dimension"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::invalid(format!("layer dimensions must be positive: {layer_dims:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-s, s).expect("finite bounds");
                let mut layer = Layer::zeros(fan_in, fan_out);
                layer.weight.iter_mut().for_each(|x| *x = dist.sample(rng));
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layers: layer_dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Builds a model from explicit layers, checking that consecutive shapes
    /// chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::invalid(format!("layer {i}: bias length does not match outputs")));
            }
            if l.inputs() == 0 || l.outputs() == 0 {
                return Err(Error::invalid(format!("layer {i} has an empty dimension")));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {cols} features, model expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for every row of `inputs`.
    pub fn logits(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let mut act = inputs.as_standard_layout().into_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            act = affine(&act, layer);
            if k < last {
                act.mapv_inplace(relu);
            }
        }
        Ok(act)
    }

    /// Bucket distribution for a single input.
    pub fn forward(&self, input: &[f64]) -> Result<BucketDistribution> {
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("input contains non-finite values"));
        }
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let logits = self.logits(view)?;
        BucketDistribution::from_logits(logits.row(0).to_vec())
    }

    /// Batch forward pass retaining what [`Mlp::backward`] needs.
    pub fn forward_trace(&self, inputs: ArrayView2<f64>) -> Result<ForwardTrace> {
        self.check_input(inputs.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut act = inputs.as_standard_layout().into_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = affine(&act, layer);
            if k < last {
                next.mapv_inplace(relu);
            }
            activations.push(act);
            act = next;
        }
        let mut probs = act.clone();
        for mut row in probs.rows_mut() {
            dde::softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(ForwardTrace {
            activations,
            logits: act,
            probs,
        })
    }

    /// Reverse pass. `grad_logits` has one row per input row of `trace`.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: ArrayView2<f64>) -> Result<GradientTape> {
        if trace.activations.len() != self.layers.len()
            || trace
                .activations
                .iter()
                .zip(&self.layers)
                .any(|(a, l)| a.ncols() != l.inputs())
        {
            return Err(Error::State(
                "backward called with a trace that was not produced by this model".into(),
            ));
        }
        if grad_logits.dim() != trace.logits.dim() {
            return Err(Error::invalid(format!(
                "logit gradient has shape {:?}, trace logits have {:?}",
                grad_logits.dim(),
                trace.logits.dim()
            )));
        }
        let mut tape = GradientTape::zeros_like(self);
        let mut delta = grad_logits.to_owned();
        for k in (0..self.layers.len()).rev() {
            let input = &trace.activations[k];
            let g = &mut tape.layers[k];
            g.weight = delta.t().dot(input);
            g.bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = delta.dot(&self.layers[k].weight);
                // ReLU mask from the post-activation values.
                Zip::from(&mut prev).and(input).for_each(|d, a| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        Ok(tape)
    }

    /// Moves every parameter toward `source`: `self = decay * self + (1 - decay) * source`.
    pub fn ema_update(&mut self, source: &Mlp, decay: f64) -> Result<()> {
        if self.layer_dims() != source.layer_dims() {
            return Err(Error::invalid("EMA between models of different shapes"));
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut dst.weight)
                .and(&src.weight)
                .for_each(|d, s| *d = decay * *d + (1.0 - decay) * s);
            Zip::from(&mut dst.bias)
                .and(&src.bias)
                .for_each(|d, s| *d = decay * *d + (1.0 - decay) * s);
        }
        Ok(())
    }

    /// Parameters in checkpoint order: per layer, weight row-major then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x = *it.next().unwrap());
        }
        Ok(())
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `input · Wᵀ + b`, always in row-major layout.
fn affine(input: &Array2<f64>, layer: &Layer) -> Array2<f64> {
    let mut out = Array2::zeros((input.nrows(), layer.outputs()));
    general_mat_mul(1.0, input, &layer.weight.t(), 0.0, &mut out);
    out += &layer.bias.view().insert_axis(Axis(0));
    out
}

/// Activations from one batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (post-ReLU for hidden layers).
    activations: Vec<Array2<f64>>,
    logits: Array2<f64>,
    probs: Array2<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    /// Row-wise softmax of the logits.
    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn prob_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.probs.row(i)
    }

    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }
}

/// Per-parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<Layer>,
}

impl GradientTape {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales the tape so its global L2 norm is at most `max_norm`.
    /// Returns the norm before rescaling.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            for l in &mut self.layers {
                l.weight.mapv_inplace(|x| x * k);
                l.bias.mapv_inplace(|x| x * k);
            }
        }
        norm
    }

    fn matches(&self, model: &Mlp) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weight.dim() == l.weight.dim() && g.bias.len() == l.bias.len())
    }
}

/// Momentum SGD with weight decay folded into the velocity:
/// `v = momentum * v + g + weight_decay * theta`, `theta -= lr * v`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: GradientTape,
}

impl OptimizerState {
    pub fn new(model: &Mlp, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay must be finite and >= 0, got {weight_decay}")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: GradientTape::zeros_like(model),
        })
    }

    pub fn velocity(&self) -> &GradientTape {
        &self.velocity
    }
}

/// One optimizer step. Fails with [`Error::Divergence`] (iteration 0; the
/// trainer rewrites it) if the gradients or the updated parameters are not
/// finite; the model is left untouched in the gradient case.
pub fn sgd_step(model: &mut Mlp, tape: &GradientTape, state: &mut OptimizerState) -> Result<()> {
    if !tape.matches(model) || !state.velocity.matches(model) {
        return Err(Error::invalid("gradient/velocity shapes do not match the model"));
    }
    if !tape.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            detail: "non-finite gradient".into(),
        });
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for ((param, grad), vel) in model
        .layers
        .iter_mut()
        .zip(&tape.layers)
        .zip(&mut state.velocity.layers)
    {
        Zip::from(&mut param.weight)
            .and(&grad.weight)
            .and(&mut vel.weight)
            .for_each(|p, g, v| {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            });
        Zip::from(&mut param.bias)
            .and(&grad.bias)
            .and(&mut vel.bias)
            .for_each(|p, g, v| {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            });
    }
    if !model.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(theta: f64) -> Mlp {
        let mut m = Mlp::zeros(&[1, 1]).unwrap();
        m.layers[0].weight[[0, 0]] = theta;
        m
    }

    fn scalar_tape(g: f64) -> GradientTape {
        let mut t = GradientTape::zeros_like(&scalar_model(0.0));
        t.layers[0].weight[[0, 0]] = g;
        t
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Mlp::zeros(&[3, 4, 5]).unwrap();
        let d = m.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert!(d.probs().iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn bias_only_model_is_softmax_of_bias() {
        let mut m = Mlp::zeros(&[2, 3]).unwrap();
        m.layers[0].bias = array![0.0, 2.0, -1.0];
        let d = m.forward(&[5.0, 7.0]).unwrap();
        let expected = dde::softmax(&[0.0, 2.0, -1.0]).unwrap();
        assert_eq!(d.probs(), expected.as_slice());
    }

    #[test]
    fn random_forward_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::new(&[6, 16, 16, 40], &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 0.7).collect();
        let total: f64 = m.forward(&x).unwrap().probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(m.forward(&x[..5]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Mlp::new(&[3, 8, 5], &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let trace = m.forward_trace(x.view()).unwrap();
        let tape = m.backward(&trace, Array2::zeros((2, 5)).view()).unwrap();
        assert!(tape.flat().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mlp::new(&[3, 4], &mut rng).unwrap();
        let x = array![[0.5, -2.0, 3.0]];
        let trace = m.forward_trace(x.view()).unwrap();
        let mut g = Array2::zeros((1, 4));
        g[[0, 2]] = 1.0;
        let tape = m.backward(&trace, g.view()).unwrap();
        assert_eq!(tape.layers[0].weight.row(2), x.row(0));
        assert_eq!(tape.layers[0].bias[2], 1.0);
        assert_eq!(tape.layers[0].weight.row(0).sum(), 0.0);
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Mlp::new(&[3, 8, 5], &mut rng).unwrap();
        let b = Mlp::new(&[3, 5], &mut rng).unwrap();
        let trace = b.forward_trace(array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert!(matches!(
            a.backward(&trace, Array2::zeros((1, 5)).view()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = Mlp::new(&[4, 7, 6, 3], &mut rng).unwrap();
        for l in m.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        // loss = sum(w * logits^2)
        let loss = |m: &Mlp| {
            let z = m.logits(x.view()).unwrap();
            (&z * &z * &w).sum()
        };
        let trace = m.forward_trace(x.view()).unwrap();
        let upstream = 2.0 * &trace.logits() * &w;
        let analytic = m.backward(&trace, upstream.view()).unwrap().flat();
        let base = m.flat_params();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            m.set_flat_params(&p).unwrap();
            let up = loss(&m);
            p[i] -= 2.0 * h;
            m.set_flat_params(&p).unwrap();
            let dn = loss(&m);
            let numeric = (up - dn) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {} vs {numeric}", analytic[i]);
        }
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut m = scalar_model(0.7);
        let mut s = OptimizerState::new(&m, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut m, &scalar_tape(0.0), &mut s).unwrap();
        assert_eq!(m.layers[0].weight[[0, 0]], 0.7);
    }

    #[test]
    fn sgd_vanilla_step() {
        let mut m = scalar_model(0.0);
        let mut s = OptimizerState::new(&m, 0.1, 0.0, 0.0).unwrap();
        sgd_step(&mut m, &scalar_tape(1.0), &mut s).unwrap();
        assert!((m.layers[0].weight[[0, 0]] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut m = scalar_model(0.0);
        let mut s = OptimizerState::new(&m, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut m, &scalar_tape(1.0), &mut s).unwrap();
        sgd_step(&mut m, &scalar_tape(1.0), &mut s).unwrap();
        assert!((m.layers[0].weight[[0, 0]] + 0.29).abs() < 1e-12);
        assert!((s.velocity().layers[0].weight[[0, 0]] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut m = scalar_model(0.0);
        let mut s = OptimizerState::new(&m, 0.1, 0.9, 0.0).unwrap();
        let err = sgd_step(&mut m, &scalar_tape(f64::NAN), &mut s).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert_eq!(m.layers[0].weight[[0, 0]], 0.0);
    }

    #[test]
    fn clip_norm_rescales_only_above_bound() {
        let mut m = Mlp::zeros(&[1, 2]).unwrap();
        let mut t = GradientTape::zeros_like(&m);
        t.layers[0].weight[[0, 0]] = 3.0;
        t.layers[0].bias[1] = 4.0;
        assert_eq!(t.clip_norm(10.0), 5.0);
        assert_eq!(t.flat(), vec![3.0, 0.0, 0.0, 4.0]);
        assert_eq!(t.clip_norm(1.0), 5.0);
        assert!((t.norm() - 1.0).abs() < 1e-15);
        assert!((t.layers[0].weight[[0, 0]] - 0.6).abs() < 1e-15);
        m.layers[0].bias[0] = 1.0;
        assert!(t.matches(&m));
    }

    #[test]
    fn single_row_and_single_feature_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dims in [[1, 3, 2], [4, 2, 5], [1, 1, 1]] {
            let m = Mlp::new(&dims, &mut rng).unwrap();
            for n in [1, 3] {
                let x = Array2::from_shape_fn((n, dims[0]), |(i, j)| i as f64 - j as f64 * 0.5);
                let trace = m.forward_trace(x.view()).unwrap();
                assert!(trace.probs().rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12));
                let col = x.t().to_owned();
                assert_eq!(m.logits(col.t()).unwrap(), m.logits(x.view()).unwrap());
            }
        }
    }

    #[test]
    fn ema_moves_toward_source() {
        let mut a = scalar_model(1.0);
        let b = scalar_model(0.0);
        a.ema_update(&b, 0.9).unwrap();
        assert!((a.layers[0].weight[[0, 0]] - 0.9).abs() < 1e-15);
    }
}
