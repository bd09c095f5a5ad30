//! Dense feedforward networks over flat parameter vectors.

use super::params::{Layout, ParamVector};
use super::tape::{Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Identity,
    LogSoftmax,
}

/// Architecture descriptor for a dense network: sizes, hidden activation,
/// and an optional log-softmax output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub head: OutputHead,
}

impl MlpArch {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize, activation: Activation) -> Self {
        MlpArch {
            input,
            hidden,
            output,
            activation,
            head: OutputHead::Identity,
        }
    }

    pub fn with_head(mut self, head: OutputHead) -> Self {
        self.head = head;
        self
    }

    /// Layer dimensions as (in, out) pairs.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output));
        dims
    }

    /// Parameter layout: alternating weight and bias segments per layer.
    pub fn layout(&self) -> Layout {
        let mut segments = Vec::new();
        for (i, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            segments.push((format!("w{i}"), vec![fan_out, fan_in]));
            segments.push((format!("b{i}"), vec![fan_out]));
        }
        Layout::new(segments)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total_len()
    }

    /// Per-parameter fan-in of the layer each parameter belongs to.
    pub fn fan_ins(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_dims() {
            out.extend(std::iter::repeat_n(fan_in as f64, fan_in * fan_out + fan_out));
        }
        out
    }

    /// He-style random initialization; `zero_last_layer` zeroes the final
    /// weight and bias segments so the initial function is constant.
    pub fn init_params<R: Rng>(&self, rng: &mut R, zero_last_layer: bool) -> ParamVector {
        let dims = self.layer_dims();
        let n_layers = dims.len();
        let mut values = Vec::with_capacity(self.param_count());
        for (li, (fan_in, fan_out)) in dims.into_iter().enumerate() {
            let zero = zero_last_layer && li == n_layers - 1;
            let scale = (2.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                if zero {
                    values.push(0.0);
                } else {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    values.push(u * scale);
                }
            }
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::new(Arc::new(self.layout()), values)
    }

    fn activate_plain(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Identity => x,
        }
    }
}

/// Plain (non-differentiable) forward pass.
pub fn forward_mlp(arch: &MlpArch, params: &[f64], input: &[f64]) -> Vec<f64> {
    assert_eq!(input.len(), arch.input, "input size mismatch");
    assert_eq!(params.len(), arch.param_count(), "param size mismatch");
    let dims = arch.layer_dims();
    let n_layers = dims.len();
    let mut act = input.to_vec();
    let mut offset = 0;
    for (li, (fan_in, fan_out)) in dims.into_iter().enumerate() {
        let w = &params[offset..offset + fan_in * fan_out];
        offset += fan_in * fan_out;
        let b = &params[offset..offset + fan_out];
        offset += fan_out;
        let mut next = vec![0.0; fan_out];
        for r in 0..fan_out {
            let row = &w[r * fan_in..(r + 1) * fan_in];
            let z: f64 = row.iter().zip(&act).map(|(&wij, &aj)| wij * aj).sum::<f64>() + b[r];
            next[r] = if li == n_layers - 1 {
                z
            } else {
                arch.activate_plain(z)
            };
        }
        act = next;
    }
    if arch.head == OutputHead::LogSoftmax {
        let m = act.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + act.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
        for z in act.iter_mut() {
            *z -= lse;
        }
    }
    act
}

/// Weight/bias slice vars for one network, cut once from a flat parameter
/// node so repeated forwards on the same tape share them.
pub struct MlpVars {
    layers: Vec<(Var, Var, usize, usize)>,
}

impl MlpVars {
    pub fn slice_from(tape: &mut Tape, arch: &MlpArch, theta: Var) -> Self {
        assert_eq!(
            tape.value(theta).len(),
            arch.param_count(),
            "param size mismatch"
        );
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in arch.layer_dims() {
            let w = tape.slice(theta, offset, fan_in * fan_out);
            offset += fan_in * fan_out;
            let b = tape.slice(theta, offset, fan_out);
            offset += fan_out;
            layers.push((w, b, fan_out, fan_in));
        }
        MlpVars { layers }
    }
}

/// Differentiable forward pass; the input enters as a constant leaf.
pub fn forward_mlp_on_tape(tape: &mut Tape, arch: &MlpArch, vars: &MlpVars, input: &[f64]) -> Var {
    let mut act = tape.leaf(input.to_vec());
    let n_layers = vars.layers.len();
    for (li, &(w, b, rows, cols)) in vars.layers.iter().enumerate() {
        let z0 = tape.mat_vec(w, act, rows, cols);
        let z = tape.add(z0, b);
        act = if li == n_layers - 1 {
            z
        } else {
            match arch.activation {
                Activation::Relu => tape.relu(z),
                Activation::Tanh => tape.tanh(z),
                Activation::Sigmoid => tape.sigmoid(z),
                Activation::Softplus => tape.softplus(z),
                Activation::Identity => z,
            }
        };
    }
    if arch.head == OutputHead::LogSoftmax {
        let lse = tape.log_sum_exp(act);
        let rep = tape.repeat(lse, tape.value(act).len());
        act = tape.sub(act, rep);
    }
    act
}
