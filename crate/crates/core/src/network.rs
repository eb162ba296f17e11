//! Dense feedforward classifier with a Dirichlet output head.
//!
//! Hidden layers use the rectifier; the output layer maps its pre-activation
//! `z` to `α = softplus(z) + 1`, so every concentration is at least one.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dirichlet::DirichletParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{self, LossConfig};
use crate::rng::RandomStream;

pub const CHECKPOINT_FORMAT: &str = "iad-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// One affine layer: `weights` is `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weights: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(x);
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Per-parameter gradients, laid out exactly like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Everything backpropagation needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is the feature vector.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub pre_activations: Vec<Vec<f64>>,
    pub alpha: DirichletParams,
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl NetworkParams {
    /// Fan-in scaled uniform init, `U(±√(6/fan_in))`, zero biases.
    /// `sizes` is `[input, hidden.., classes]` with at least one hidden layer.
    pub fn init(sizes: &[usize], rng: &mut RandomStream) -> Result<Self> {
        validate_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, out);
                for v in layer.weights.as_mut_slice() {
                    *v = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(Self { layers, activation: Activation::Relu })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let mut sizes = vec![layers.first().map(Dense::inputs).unwrap_or(0)];
        for l in &layers {
            if l.inputs() != *sizes.last().unwrap() {
                return Err(Error::DimensionMismatch { expected: *sizes.last().unwrap(), actual: l.inputs() });
            }
            if l.bias.len() != l.outputs() {
                return Err(Error::DimensionMismatch { expected: l.outputs(), actual: l.bias.len() });
            }
            sizes.push(l.outputs());
        }
        validate_sizes(&sizes)?;
        let net = Self { layers, activation: Activation::Relu };
        if net.iter_params().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("network parameters must be finite".into()));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    fn iter_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.as_slice().iter().chain(&l.bias)).copied()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.iter_params().collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), actual: flat.len() });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for v in l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("input features must be finite".into()));
        }
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre_activations = Vec::with_capacity(depth);
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a);
            inputs.push(a);
            a = if i + 1 < depth { z.iter().map(|v| v.max(0.0)).collect() } else { Vec::new() };
            pre_activations.push(z);
        }
        let alpha = pre_activations[depth - 1].iter().map(|&z| softplus(z) + 1.0).collect();
        Ok(ForwardTrace { inputs, pre_activations, alpha: DirichletParams::with_unit_floor(alpha)? })
    }

    /// Concentrations for `x` without keeping the trace.
    pub fn predict(&self, x: &[f64]) -> Result<DirichletParams> {
        Ok(self.forward(x)?.alpha)
    }

    /// Exact parameter gradients of a scalar loss given `∂loss/∂α`.
    pub fn backward(&self, trace: &ForwardTrace, dloss_dalpha: &[f64]) -> Result<Gradients> {
        Ok(self.backprop(trace, dloss_dalpha, false)?.0)
    }

    /// Gradient with respect to the input features given `∂loss/∂α`.
    pub fn backward_input(&self, trace: &ForwardTrace, dloss_dalpha: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backprop(trace, dloss_dalpha, true)?.1)
    }

    fn backprop(&self, trace: &ForwardTrace, dloss_dalpha: &[f64], want_input: bool) -> Result<(Gradients, Vec<f64>)> {
        let depth = self.layers.len();
        if trace.pre_activations.len() != depth || trace.inputs.len() != depth {
            return Err(Error::DimensionMismatch { expected: depth, actual: trace.pre_activations.len() });
        }
        if dloss_dalpha.len() != self.num_classes() {
            return Err(Error::DimensionMismatch { expected: self.num_classes(), actual: dloss_dalpha.len() });
        }
        for (layer, (inp, z)) in self.layers.iter().zip(trace.inputs.iter().zip(&trace.pre_activations)) {
            if inp.len() != layer.inputs() || z.len() != layer.outputs() {
                return Err(Error::InvalidArgument("trace does not belong to this network".into()));
            }
        }
        // dα/dz = sigmoid(z)
        let mut delta: Vec<f64> = dloss_dalpha
            .iter()
            .zip(&trace.pre_activations[depth - 1])
            .map(|(g, &z)| g * sigmoid(z))
            .collect();
        let mut grads = Vec::with_capacity(depth);
        let mut input_grad = Vec::new();
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            let a = &trace.inputs[i];
            let mut g = Dense::zeros(layer.inputs(), layer.outputs());
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g.weights.as_mut_slice()[r * layer.inputs()..(r + 1) * layer.inputs()];
                for (w, &av) in row.iter_mut().zip(a) {
                    *w = d * av;
                }
            }
            g.bias.copy_from_slice(&delta);
            grads.push(g);
            if i > 0 || want_input {
                let back = layer.weights.tr_mul_vec(&delta);
                if i > 0 {
                    delta = back
                        .iter()
                        .zip(&trace.pre_activations[i - 1])
                        .map(|(b, &z)| if z > 0.0 { *b } else { 0.0 })
                        .collect();
                } else {
                    input_grad = back;
                }
            }
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, input_grad))
    }

    /// Gradient of the max-norm classification loss with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], correct_class: usize, cfg: &LossConfig) -> Result<Vec<f64>> {
        let trace = self.forward(x)?;
        let g = losses::iad_loss_grad_alpha(&trace.alpha, correct_class, cfg.p_norm)?;
        self.backward_input(&trace, &g)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            activation: self.activation,
            layer_sizes: self.layer_sizes(),
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer { weights: l.weights.as_slice().to_vec(), bias: l.bias.clone() })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint: format tag `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        validate_sizes(&ck.layer_sizes)?;
        if ck.layers.len() + 1 != ck.layer_sizes.len() {
            return Err(Error::Format("layer count does not match layer_sizes".into()));
        }
        let layers = ck
            .layers
            .into_iter()
            .zip(ck.layer_sizes.windows(2))
            .map(|(l, w)| {
                let weights = Matrix::from_row_major(w[1], w[0], l.weights)
                    .map_err(|e| Error::Format(format!("weight array: {e}")))?;
                Ok(Dense { weights, bias: l.bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "layer spec {sizes:?} needs input, at least one hidden layer, and output"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("layer spec {sizes:?} has an empty layer")));
    }
    if *sizes.last().unwrap() < 2 {
        return Err(Error::InvalidArgument("output layer needs at least 2 classes".into()));
    }
    Ok(())
}

/// On-disk model: JSON with layer sizes, activation tag and row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub activation: Activation,
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &NetworkParams) -> Self {
        Self { layers: net.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for x in l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()) {
                *x *= s;
            }
        }
    }

    /// Same ordering as [`NetworkParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.as_slice().iter().chain(&l.bias)).copied().collect()
    }
}
