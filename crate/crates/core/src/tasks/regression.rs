//! Heteroskedastic 1-D regression task and its base predictor.
//!
//! The generator: x ~ U(−1, 1), y = cos(5x) + 0.3·ε₁ + 1.8·σ(5x)·ε₂ with
//! ε₁, ε₂ ~ U(−0.5, 0.5) and σ the logistic sigmoid, so label noise grows
//! with x. The base predictor is a two-hidden-layer ReLU network of width 64
//! fit by minibatch SGD on mean squared error.

use crate::conformal::{LabeledData, Target};
use crate::diff::nn::{forward_mlp, forward_mlp_on_tape, Activation, MlpArch, MlpVars};
use crate::diff::params::ParamVector;
use crate::diff::tape::Tape;
use crate::optim::{OptimKind, Updater};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RegressionTask {
    pub train: LabeledData,
    pub cal: LabeledData,
    pub test: LabeledData,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Noise-free regression function cos(5x).
pub fn regression_mean(x: f64) -> f64 {
    (5.0 * x).cos()
}

/// One draw from the generative model.
pub fn regression_sample<R: Rng>(rng: &mut R) -> (f64, f64) {
    let x: f64 = rng.random_range(-1.0..1.0);
    let e1: f64 = rng.random_range(-0.5..0.5);
    let e2: f64 = rng.random_range(-0.5..0.5);
    let y = regression_mean(x) + 0.3 * e1 + 1.8 * sigmoid(5.0 * x) * e2;
    (x, y)
}

fn draw(n: usize, rng: &mut ChaCha8Rng) -> LabeledData {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y) = regression_sample(rng);
        xs.push(vec![x]);
        ys.push(Target::Value(y));
    }
    LabeledData::new(xs, ys)
}

/// Deterministic i.i.d. splits; train, calibration, and test points are
/// separate draws from one seeded stream, so the splits are disjoint by
/// construction.
pub fn gen_regression(n_train: usize, n_cal: usize, n_test: usize, seed: u64) -> RegressionTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RegressionTask {
        train: draw(n_train, &mut rng),
        cal: draw(n_cal, &mut rng),
        test: draw(n_test, &mut rng),
    }
}

/// The base predictor's architecture: 1 → 64 → 64 → 1, ReLU.
pub fn regression_base_arch() -> MlpArch {
    MlpArch::new(1, vec![64, 64], 1, Activation::Relu)
}

/// Minibatch SGD on mean squared error over the task's train split.
pub fn train_base_regressor(
    task: &RegressionTask,
    steps: usize,
    lr: f64,
    seed: u64,
) -> ParamVector {
    let arch = regression_base_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = arch.init_params(&mut rng, false);
    let n = task.train.len();
    assert!(n > 0, "empty train split");
    let batch_size = n.min(32);
    let mut updater = Updater::new(OptimKind::Sgd, lr, params.len());

    for _ in 0..steps {
        let mut idx = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            idx.push(rng.random_range(0..n));
        }
        let (loss_grad, _) = mse_loss_grads(&arch, params.values(), &task.train, &idx);
        updater.step(params.values_mut(), &loss_grad);
    }
    params
}

/// Gradient (and value) of the mean squared error over the given indices.
pub fn mse_loss_grads(
    arch: &MlpArch,
    params: &[f64],
    data: &LabeledData,
    indices: &[usize],
) -> (Vec<f64>, f64) {
    let mut tape = Tape::new();
    let theta = tape.leaf(params.to_vec());
    let vars = MlpVars::slice_from(&mut tape, arch, theta);
    let mut residuals = Vec::with_capacity(indices.len());
    for &i in indices {
        let out = forward_mlp_on_tape(&mut tape, arch, &vars, &data.xs[i]);
        let shifted = tape.offset(out, -data.ys[i].value());
        residuals.push(tape.square(shifted));
    }
    let stacked = tape.concat(&residuals);
    let loss = tape.mean(stacked);
    let grads = tape.backward(loss);
    (grads.wrt(theta).to_vec(), tape.scalar(loss))
}

/// Train-split MSE of a parameter vector.
pub fn mse(arch: &MlpArch, params: &[f64], data: &LabeledData) -> f64 {
    let mut total = 0.0;
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let out = forward_mlp(arch, params, x)[0];
        let d = out - y.value();
        total += d * d;
    }
    total / data.len() as f64
}
