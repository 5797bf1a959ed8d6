//! Linear, layer-norm, and feed-forward building blocks.

use rand::Rng;

use super::graph::{Graph, Var};
use super::init;
use super::params::{BoundParams, ParamSet, PId};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: PId,
    pub b: PId,
}

impl Linear {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            w: ps.add(format!("{name}.weight"), init::xavier_uniform(rng, din, dout)),
            b: ps.add(format!("{name}.bias"), init::zeros(1, dout)),
        }
    }

    /// y = x W + b
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: Var) -> Var {
        let xw = g.matmul(x, bp.var(self.w));
        g.add_row_broadcast(xw, bp.var(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: PId,
    pub beta: PId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn init(ps: &mut ParamSet, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: ps.add(format!("{name}.gamma"), init::ones(1, d)),
            beta: ps.add(format!("{name}.beta"), init::zeros(1, d)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: Var) -> Var {
        g.layer_norm(x, bp.var(self.gamma), bp.var(self.beta), self.eps)
    }
}

/// Two-layer position-wise feed-forward network with ReLU.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, d: usize, hidden: usize) -> Self {
        FeedForward {
            lin1: Linear::init(ps, rng, &format!("{name}.lin1"), d, hidden),
            lin2: Linear::init(ps, rng, &format!("{name}.lin2"), hidden, d),
        }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: Var) -> Var {
        let h = self.lin1.forward(g, bp, x);
        let h = g.relu(h);
        self.lin2.forward(g, bp, h)
    }
}
