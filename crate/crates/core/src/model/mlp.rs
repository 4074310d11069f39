//! Fully connected classifier head: rectified hidden layers, then an affine
//! output layer whose softmax gives the action distribution.

use ndarray::{Array1, Array2, Axis};

use crate::graph::Activation;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl ClassifierParams {
    pub fn zeros(input: usize, hidden: &[usize], classes: usize) -> Self {
        let mut width = input;
        let mut layers = Vec::with_capacity(hidden.len());
        for &h in hidden {
            layers.push(Dense::zeros(width, h));
            width = h;
        }
        ClassifierParams {
            hidden: layers,
            output: Dense::zeros(width, classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .unwrap_or(&self.output)
            .weight
            .nrows()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MlpCache {
    /// Input to each layer, hidden layers then output.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

/// `x` is `B × in`; returns `B × classes` logits.
pub(crate) fn mlp_forward(
    x: Array2<f64>,
    p: &ClassifierParams,
    act: Activation,
) -> (Array2<f64>, MlpCache) {
    let mut inputs = Vec::with_capacity(p.hidden.len() + 1);
    let mut pre = Vec::with_capacity(p.hidden.len());
    let mut h = x;
    for layer in &p.hidden {
        let mut z = h.dot(&layer.weight);
        z += &layer.bias;
        let next = z.mapv(|v| act.apply(v));
        inputs.push(h);
        pre.push(z);
        h = next;
    }
    let mut logits = h.dot(&p.output.weight);
    logits += &p.output.bias;
    inputs.push(h);
    (logits, MlpCache { inputs, pre })
}

/// Accumulates gradients and returns `dL/dx`.
pub(crate) fn mlp_backward(
    cache: &MlpCache,
    p: &ClassifierParams,
    act: Activation,
    d_logits: &Array2<f64>,
    grad: &mut ClassifierParams,
) -> Array2<f64> {
    let n_hidden = p.hidden.len();
    grad.output.weight += &cache.inputs[n_hidden].t().dot(d_logits);
    grad.output.bias += &d_logits.sum_axis(Axis(0));
    let mut d = d_logits.dot(&p.output.weight.t());
    for l in (0..n_hidden).rev() {
        d.zip_mut_with(&cache.pre[l], |g, &z| *g *= act.grad(z));
        grad.hidden[l].weight += &cache.inputs[l].t().dot(&d);
        grad.hidden[l].bias += &d.sum_axis(Axis(0));
        d = d.dot(&p.hidden[l].weight.t());
    }
    d
}
