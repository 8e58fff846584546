//! Minimal dense neural-network substrate: layers, analytic gradients,
//! plain gradient-descent updates, and a finite-difference checker.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z` (relu'(0) taken as 0).
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully-connected layer: activation(W·x + b).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Seeded uniform init in ±sqrt(6 / (fan_in + fan_out)).
    pub fn init<R: Rng>(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        DenseLayer { weight, bias: Array1::zeros(out_dim), activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, input: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(input)?.1)
    }

    /// Returns (pre-activation, output); the pre-activation is needed by
    /// the backward pass.
    pub fn forward_cached(&self, input: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense layer expects input of length {}, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        let z = self.weight.dot(input) + &self.bias;
        let out = z.mapv(|v| self.activation.apply(v));
        Ok((z, out))
    }

    /// Given dL/d(output), the cached pre-activation and the layer input,
    /// returns (dL/dW, dL/db, dL/d(input)).
    pub fn backward(
        &self,
        grad_out: &Array1<f64>,
        preact: &Array1<f64>,
        input: &Array1<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let dz = grad_out * &preact.mapv(|v| self.activation.derivative(v));
        let dw = dz
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&input.view().insert_axis(ndarray::Axis(0)));
        let dinput = self.weight.t().dot(&dz);
        (dw, dz, dinput)
    }
}

/// Squared-error loss (y_hat - y)^2 and its derivative w.r.t. y_hat.
pub fn mse_loss(prediction: f64, target: f64) -> (f64, f64) {
    let diff = prediction - target;
    (diff * diff, 2.0 * diff)
}

/// Anything with a flat, stably-ordered parameter vector.
pub trait Parametrized {
    fn num_params(&self) -> usize;
    fn get_params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]);
}

/// One gradient-descent step: theta <- theta - lr * grad, elementwise over
/// the whole parameter vector (generator and forecaster together).
pub fn sgd_step<M: Parametrized>(model: &mut M, grads: &[f64], learning_rate: f64) {
    debug_assert_eq!(grads.len(), model.num_params());
    let mut params = model.get_params();
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    model.set_params(&params);
}

/// Plain multilayer perceptron with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Hidden layers are relu, the output layer identity.
    pub fn init<R: Rng>(in_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut prev = in_dim;
        for &h in hidden {
            layers.push(DenseLayer::init(h, prev, Activation::Relu, rng));
            prev = h;
        }
        layers.push(DenseLayer::init(1, prev, Activation::Identity, rng));
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn forward(&self, input: &Array1<f64>) -> Result<f64> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x[0])
    }

    /// Smallest |pre-activation| across relu layers; used to reject
    /// inputs near kinks before finite-difference checks.
    pub fn min_abs_relu_preactivation(&self, input: &Array1<f64>) -> Result<f64> {
        let trace = self.forward_trace(input)?;
        let mut min = f64::INFINITY;
        for (layer, z) in self.layers.iter().zip(&trace.preacts) {
            if layer.activation == Activation::Relu {
                for v in z {
                    min = min.min(v.abs());
                }
            }
        }
        Ok(min)
    }

    /// Forward pass keeping per-layer inputs and pre-activations.
    fn forward_trace(&self, input: &Array1<f64>) -> Result<MlpTrace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (z, out) = layer.forward_cached(&x)?;
            inputs.push(x);
            preacts.push(z);
            x = out;
        }
        Ok(MlpTrace { inputs, preacts, output: x[0] })
    }

    /// Backpropagate dL/d(output); returns per-layer (dW, db) plus
    /// dL/d(network input).
    pub fn backward(
        &self,
        input: &Array1<f64>,
        grad_output: f64,
    ) -> Result<(f64, Vec<(Array2<f64>, Array1<f64>)>, Array1<f64>)> {
        let trace = self.forward_trace(input)?;
        let mut grad = Array1::from_elem(1, grad_output);
        let mut layer_grads = vec![None; self.layers.len()];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (dw, db, dinput) = layer.backward(&grad, &trace.preacts[idx], &trace.inputs[idx]);
            layer_grads[idx] = Some((dw, db));
            grad = dinput;
        }
        let grads = layer_grads.into_iter().map(|g| g.unwrap()).collect();
        Ok((trace.output, grads, grad))
    }

    /// MSE loss and flat gradient for one sample.
    pub fn loss_and_grad(&self, input: &Array1<f64>, target: f64) -> Result<(f64, Vec<f64>)> {
        let prediction = self.forward(input)?;
        let (loss, dloss) = mse_loss(prediction, target);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss (prediction {prediction}, target {target})"
            )));
        }
        let (_, grads, _) = self.backward(input, dloss)?;
        let mut flat = Vec::with_capacity(self.num_params());
        for (dw, db) in &grads {
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
        Ok((loss, flat))
    }
}

struct MlpTrace {
    inputs: Vec<Array1<f64>>,
    preacts: Vec<Array1<f64>>,
    output: f64,
}

impl Parametrized for Mlp {
    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn get_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            flat.extend(layer.weight.iter());
            flat.extend(layer.bias.iter());
        }
        flat
    }

    fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[offset];
                offset += 1;
            }
        }
    }
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, analytic, numeric, relative error) over `tol`.
    pub flagged: Vec<(usize, f64, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Compare an analytic gradient with central finite differences of `loss`.
/// Entries where both gradients are below 1e-7 in magnitude are skipped
/// (finite differences carry no signal there).
pub fn check_gradients<M, F>(
    model: &mut M,
    mut loss: F,
    analytic: &[f64],
    epsilon: f64,
    tol: f64,
) -> GradCheckReport
where
    M: Parametrized,
    F: FnMut(&M) -> f64,
{
    assert!(epsilon > 0.0);
    let base = model.get_params();
    let mut max_rel_err: f64 = 0.0;
    let mut flagged = Vec::new();
    for i in 0..base.len() {
        let mut params = base.clone();
        params[i] = base[i] + epsilon;
        model.set_params(&params);
        let plus = loss(model);
        params[i] = base[i] - epsilon;
        model.set_params(&params);
        let minus = loss(model);
        params[i] = base[i];
        let numeric = (plus - minus) / (2.0 * epsilon);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale < 1e-7 {
            continue;
        }
        let rel = (analytic[i] - numeric).abs() / scale;
        max_rel_err = max_rel_err.max(rel);
        if rel > tol {
            flagged.push((i, analytic[i], numeric, rel));
        }
    }
    model.set_params(&base);
    GradCheckReport { max_rel_err, flagged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let x = array![1.0, -2.0, 3.0];
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negative_entries() {
        let layer = DenseLayer {
            weight: Array2::eye(2),
            bias: Array1::zeros(2),
            activation: Activation::Relu,
        };
        assert_eq!(layer.forward(&array![-1.0, 2.0]).unwrap(), array![0.0, 2.0]);
    }

    #[test]
    fn dense_forward_hand_example() {
        let layer = DenseLayer {
            weight: array![[1.0, 1.0]],
            bias: array![0.5],
            activation: Activation::Identity,
        };
        assert_eq!(layer.forward(&array![1.0, 2.0]).unwrap(), array![3.5]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let layer = DenseLayer {
            weight: Array2::eye(2),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        };
        assert!(matches!(layer.forward(&array![1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_network_output_bias_gradient_is_minus_two_target() {
        // relu hidden + identity output, all parameters zero: the output
        // bias is the only parameter on an active path.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = Mlp::init(2, &[3], &mut rng);
        mlp.set_params(&vec![0.0; mlp.num_params()]);
        let target = 1.5;
        let (_, grads) = mlp.loss_and_grad(&array![1.0, 1.0], target).unwrap();
        let out_bias_grad = *grads.last().unwrap();
        assert!((out_bias_grad - (-2.0 * target)).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_mse_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(2, &[], &mut rng);
        let x = array![0.3, -0.7];
        let target = mlp.forward(&x).unwrap();
        let (loss, grads) = mlp.loss_and_grad(&x, target).unwrap();
        assert!(loss < 1e-24);
        for g in grads {
            assert!(g.abs() < 1e-10);
        }
    }

    #[test]
    fn two_layer_net_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mlp = Mlp::init(3, &[4, 4], &mut rng);
        let x = array![0.9, -0.4, 0.7];
        let target = 0.25;
        let (_, analytic) = mlp.loss_and_grad(&x, target).unwrap();
        let report = check_gradients(
            &mut mlp,
            |m| m.loss_and_grad(&x, target).unwrap().0,
            &analytic,
            1e-5,
            1e-4,
        );
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn linear_model_gradient_check_is_nearly_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::init(4, &[], &mut rng);
        let x = array![0.5, -1.0, 0.25, 2.0];
        let (_, analytic) = mlp.loss_and_grad(&x, 1.0).unwrap();
        let report = check_gradients(
            &mut mlp,
            |m| m.loss_and_grad(&x, 1.0).unwrap().0,
            &analytic,
            1e-5,
            1e-4,
        );
        assert!(report.max_rel_err < 1e-8, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut mlp = Mlp::init(2, &[3], &mut rng);
        let x = array![0.8, -0.6];
        let (_, mut analytic) = mlp.loss_and_grad(&x, 0.5).unwrap();
        let victim = analytic.iter().position(|g| g.abs() > 0.01).unwrap();
        analytic[victim] *= 2.0;
        let report = check_gradients(
            &mut mlp,
            |m| m.loss_and_grad(&x, 0.5).unwrap().0,
            &analytic,
            1e-5,
            1e-4,
        );
        assert!(report.flagged.iter().any(|f| f.0 == victim));
    }

    #[test]
    fn sgd_step_hand_example_and_linearity() {
        struct One(f64);
        impl Parametrized for One {
            fn num_params(&self) -> usize {
                1
            }
            fn get_params(&self) -> Vec<f64> {
                vec![self.0]
            }
            fn set_params(&mut self, flat: &[f64]) {
                self.0 = flat[0];
            }
        }
        let mut m = One(1.0);
        sgd_step(&mut m, &[2.0], 0.1);
        assert!((m.0 - 0.8).abs() < 1e-15);

        let mut twice = One(1.0);
        sgd_step(&mut twice, &[2.0], 0.1);
        sgd_step(&mut twice, &[2.0], 0.1);
        let mut once = One(1.0);
        sgd_step(&mut once, &[2.0], 0.2);
        assert!((twice.0 - once.0).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mlp = Mlp::init(2, &[3], &mut rng);
        let before = mlp.get_params();
        let grads = vec![1.0; mlp.num_params()];
        sgd_step(&mut mlp, &grads, 0.0);
        assert_eq!(before, mlp.get_params());
    }

    #[test]
    fn linear_model_loss_non_increasing_under_sgd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mlp = Mlp::init(2, &[], &mut rng);
        let data = [
            (array![1.0, 0.0], 2.0),
            (array![0.0, 1.0], -1.0),
            (array![1.0, 1.0], 1.0),
        ];
        let total = |m: &Mlp| -> f64 {
            data.iter().map(|(x, y)| mse_loss(m.forward(x).unwrap(), *y).0).sum()
        };
        let mut prev = total(&mlp);
        for _ in 0..50 {
            let mut grads = vec![0.0; mlp.num_params()];
            for (x, y) in &data {
                let (_, g) = mlp.loss_and_grad(x, *y).unwrap();
                for (acc, gi) in grads.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            sgd_step(&mut mlp, &grads, 1e-3);
            let cur = total(&mlp);
            assert!(cur <= prev + 1e-12);
            prev = cur;
        }
    }
}
