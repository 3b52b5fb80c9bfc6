//! First-order optimisers over [`Mlp`] parameters.

use std::fmt;
use std::str::FromStr;

use super::mlp::{Gradients, Mlp};
use super::InfonetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum 0.9.
    #[default]
    SgdMomentum,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = InfonetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(InfonetError::Format(format!("unknown optimizer {other:?}"))),
        }
    }
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimiser state for one network. `step` minimises.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: Gradients,
    second: Gradients,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Mlp) -> Self {
        Self { kind, lr, first: Gradients::zeros_like(net), second: Gradients::zeros_like(net), t: 0 }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((vw, vb), (gw, gb)) in self.first.layers.iter_mut().zip(&grads.layers) {
                    vw.zip_mut_with(gw, |v, &g| *v = MOMENTUM * *v + g);
                    vb.zip_mut_with(gb, |v, &g| *v = MOMENTUM * *v + g);
                }
                net.apply_update(&self.first, -self.lr);
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - MOMENTUM.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                let lr = self.lr;
                for (idx, layer) in net.layers.iter_mut().enumerate() {
                    let (gw, gb) = &grads.layers[idx];
                    let (mw, mb) = &mut self.first.layers[idx];
                    let (sw, sb) = &mut self.second.layers[idx];
                    adam_update(layer.weights.as_slice_mut().unwrap(), gw.as_slice().unwrap(), mw.as_slice_mut().unwrap(), sw.as_slice_mut().unwrap(), lr, c1, c2);
                    adam_update(layer.bias.as_slice_mut().unwrap(), gb.as_slice().unwrap(), mb.as_slice_mut().unwrap(), sb.as_slice_mut().unwrap(), lr, c1, c2);
                }
            }
        }
    }
}

fn adam_update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for i in 0..theta.len() {
        m[i] = MOMENTUM * m[i] + (1.0 - MOMENTUM) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
    }
}
