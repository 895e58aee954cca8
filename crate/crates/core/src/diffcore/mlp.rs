use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Nonlinearity applied between hidden layers. The last layer is always linear.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation {other:?}"))),
        }
    }
}

/// Fully connected network. Layer `i` maps `layer_sizes[i] -> layer_sizes[i + 1]`
/// with weights stored `[fan_in, fan_out]` so a batch is `X W + b`.
///
/// Used both as the feature extractor and, with a single layer, as a
/// classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    activation: Activation,
}

pub type FeatureExtractor = Mlp;

/// Graph handles for one binding of an [`Mlp`]'s parameters.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-s..=s)).collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], w)?.with_requires_grad(true));
            biases.push(Tensor::zeros(vec![fan_out]).with_requires_grad(true));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn from_parts(
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::dim(format!(
                "{} weight tensors and {} bias tensors",
                weights.len(),
                biases.len()
            )));
        }
        let mut sizes = Vec::with_capacity(weights.len() + 1);
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let [fan_in, fan_out] = *w.shape() else {
                return Err(Error::dim(format!("layer {i} weight is not a matrix")));
            };
            if b.shape() != [fan_out] {
                return Err(Error::dim(format!(
                    "layer {i} bias shape {:?} does not match fan-out {fan_out}",
                    b.shape()
                )));
            }
            if let Some(&prev) = sizes.last() {
                if prev != fan_in {
                    return Err(Error::dim(format!(
                        "layer {i} expects width {fan_in}, previous layer emits {prev}"
                    )));
                }
            } else {
                sizes.push(fan_in);
            }
            sizes.push(fan_out);
        }
        validate_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            weights: weights.into_iter().map(|w| w.with_requires_grad(true)).collect(),
            biases: biases.into_iter().map(|b| b.with_requires_grad(true)).collect(),
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// All parameter tensors, layer by layer as `(W, b)`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Stop gradients into the first `n` layers.
    pub fn freeze_leading(&mut self, n: usize) {
        for (i, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            let trainable = i >= n;
            w.set_requires_grad(trainable);
            b.set_requires_grad(trainable);
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            weights: self.weights.iter().map(|w| g.leaf(w)).collect(),
            biases: self.biases.iter().map(|b| g.leaf(b)).collect(),
        }
    }

    pub fn apply(&self, g: &mut Graph, bound: &BoundMlp, input: Var) -> Result<Var> {
        let width = g.shape(input).get(1).copied();
        if g.shape(input).len() != 2 || width != Some(self.input_dim()) {
            return Err(Error::dim(format!(
                "batch of shape {:?} fed to a network with input width {}",
                g.shape(input),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = input;
        for (i, (&w, &b)) in bound.weights.iter().zip(&bound.biases).enumerate() {
            let z = g.matmul(h, w)?;
            h = g.add_bias(z, b)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// Bind and apply in one go: `[B, in] -> [B, out]`.
    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<(Var, BoundMlp)> {
        let bound = self.bind(g);
        let out = self.apply(g, &bound, input)?;
        Ok((out, bound))
    }

    /// Inference without recording a graph.
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let [n, d] = *batch.shape() else {
            return Err(Error::dim(format!(
                "expected a [B, {}] batch, got {:?}",
                self.input_dim(),
                batch.shape()
            )));
        };
        if d != self.input_dim() {
            return Err(Error::dim(format!(
                "batch width {d} does not match input width {}",
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = batch.data().to_vec();
        let mut width = d;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let out_w = w.shape()[1];
            h = kernels::matmul(&h, w.data(), n, width, out_w);
            kernels::add_bias(&mut h, b.data());
            if i < last {
                match self.activation {
                    Activation::Relu => kernels::relu(&mut h),
                    Activation::Tanh => kernels::tanh(&mut h),
                }
            }
            width = out_w;
        }
        Tensor::new(vec![n, width], h)
    }

    pub fn accumulate_grads(&mut self, bound: &BoundMlp, grads: &Gradients) -> Result<()> {
        for (w, &v) in self.weights.iter_mut().zip(&bound.weights) {
            grads.accumulate(v, w)?;
        }
        for (b, &v) in self.biases.iter_mut().zip(&bound.biases) {
            grads.accumulate(v, b)?;
        }
        Ok(())
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::dim("a network needs at least one layer"));
    }
    if sizes.contains(&0) {
        return Err(Error::dim(format!("zero-width layer in {sizes:?}")));
    }
    Ok(())
}
