//! Fully connected networks with exact reverse-mode gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::InfonetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative from the pre-activation; relu uses 0 at the kink.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = InfonetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(InfonetError::Format(format!("unknown activation {other:?}"))),
        }
    }
}

/// Affine map followed by an activation. `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the network input).
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Per-layer `(dW, db)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * factor);
            b.mapv_inplace(|v| v * factor);
        }
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Random initialisation: He-uniform for relu layers, Glorot-uniform otherwise;
    /// zero biases.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self, InfonetError> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 || dims.contains(&0) {
            return Err(InfonetError::ShapeMismatch(format!(
                "{} dims with {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                Layer {
                    weights: Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache, InfonetError> {
        if x.ncols() != self.input_dim() {
            return Err(InfonetError::ShapeMismatch(format!(
                "input width {} but network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let z = current.dot(&layer.weights.t()) + layer.bias.view().insert_axis(Axis(0));
            let act = layer.activation;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(current);
            pre.push(z);
            current = out;
        }
        Ok(ForwardCache { inputs, pre, output: current })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, ForwardCache), InfonetError> {
        let cache = self.forward_batch(x.insert_axis(Axis(0)))?;
        let out = cache.output.row(0).to_owned();
        Ok((out, cache))
    }

    /// Output only, without keeping the cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, InfonetError> {
        Ok(self.forward_batch(x)?.output)
    }

    /// Reverse pass. `output_grad` holds `∂L/∂output` per sample; parameter
    /// gradients are summed over the batch. Also returns `∂L/∂input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), InfonetError> {
        if cache.inputs.len() != self.layers.len() || output_grad.dim() != cache.output.dim() {
            return Err(InfonetError::ShapeMismatch(format!(
                "gradient {:?} does not match cached output {:?}",
                output_grad.dim(),
                cache.output.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.to_owned();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[idx];
            let post: ArrayView2<f64> = if idx + 1 < self.layers.len() {
                cache.inputs[idx + 1].view()
            } else {
                cache.output.view()
            };
            let act = layer.activation;
            let mut delta = upstream;
            if act != Activation::Identity {
                Zip::from(&mut delta).and(pre).and(&post).for_each(|d, &p, &q| *d *= act.derivative(p, q));
            }
            let dw = delta.t().dot(&cache.inputs[idx]);
            let db = delta.sum_axis(Axis(0));
            upstream = delta.dot(&layer.weights);
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, upstream))
    }

    /// `θ += factor · g` for every parameter.
    pub fn apply_update(&mut self, update: &Gradients, factor: f64) {
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&update.layers) {
            layer.weights.scaled_add(factor, dw);
            layer.bias.scaled_add(factor, db);
        }
    }

    /// Flat view of parameter `i` (weights row-major, then bias, layer by layer).
    pub fn parameter_mut(&mut self, mut i: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if i < nw {
                let cols = layer.weights.ncols();
                return &mut layer.weights[[i / cols, i % cols]];
            }
            i -= nw;
            if i < layer.bias.len() {
                return &mut layer.bias[i];
            }
            i -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

impl Gradients {
    /// Same flat indexing as [`Mlp::parameter_mut`].
    pub fn get(&self, mut i: usize) -> f64 {
        for (w, b) in &self.layers {
            if i < w.len() {
                return w[[i / w.ncols(), i % w.ncols()]];
            }
            i -= w.len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }
}
