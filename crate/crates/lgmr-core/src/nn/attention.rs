//! Multi-head attention over graph variables.
//!
//! Callers add positional encodings to the query/key projection inputs where
//! required; the value projection always consumes the raw stream. Every
//! forward returns the head-averaged attention weights alongside the output.

use rand::Rng;

use super::graph::{Graph, Var};
use super::layers::Linear;
use super::params::{BoundParams, ParamSet};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d: usize,
}

pub struct AttnOutput {
    pub out: Var,
    /// Head-averaged attention weights, n_q x n_k, rows sum to 1 over
    /// unmasked keys.
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, d: usize, heads: usize) -> Self {
        assert!(heads >= 1 && d % heads == 0, "hidden dim must split across heads");
        MultiHeadAttention {
            wq: Linear::init(ps, rng, &format!("{name}.q_proj"), d, d),
            wk: Linear::init(ps, rng, &format!("{name}.k_proj"), d, d),
            wv: Linear::init(ps, rng, &format!("{name}.v_proj"), d, d),
            wo: Linear::init(ps, rng, &format!("{name}.out_proj"), d, d),
            heads,
            d,
        }
    }

    /// `residual_pre_out`, when given, is added to the concatenated heads
    /// before the output projection.
    pub fn forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        q_input: Var,
        k_input: Var,
        v_input: Var,
        key_mask: Option<&[bool]>,
        residual_pre_out: Option<Var>,
    ) -> AttnOutput {
        let dh = self.d / self.heads;
        let q = self.wq.forward(g, bp, q_input);
        let k = self.wk.forward(g, bp, k_input);
        let v = self.wv.forward(g, bp, v_input);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads);
        let mut weights_sum: Option<Var> = None;
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores, key_mask);
            head_outs.push(g.matmul(attn, vh));
            weights_sum = Some(match weights_sum {
                Some(acc) => g.add(acc, attn),
                None => attn,
            });
        }
        let mut concat = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            g.concat_cols(&head_outs)
        };
        if let Some(r) = residual_pre_out {
            concat = g.add(concat, r);
        }
        let out = self.wo.forward(g, bp, concat);
        let weights = g.scale(weights_sum.expect("at least one head"), 1.0 / self.heads as f64);
        AttnOutput { out, weights }
    }

    /// Overwrites all four projections with identity weights and zero biases.
    /// Intended for tests that need exact attention arithmetic.
    pub fn set_identity(&self, ps: &mut ParamSet) {
        for lin in [self.wq, self.wk, self.wv, self.wo] {
            let w = ps.tensor_mut(lin.w);
            let d = w.rows;
            *w = identity(d);
            let b = ps.tensor_mut(lin.b);
            b.data.fill(0.0);
        }
    }
}

pub fn identity(d: usize) -> Tensor {
    let mut t = Tensor::zeros(d, d);
    for i in 0..d {
        t.set(i, i, 1.0);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, heads: usize) -> (ParamSet, MultiHeadAttention) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mha = MultiHeadAttention::init(&mut ps, &mut rng, "attn", d, heads);
        (ps, mha)
    }

    #[test]
    fn singleton_softmax_returns_value_projection() {
        // One key: softmax weight is 1, so with identity projections the
        // output equals the (identity) value projection of the single row.
        let (mut ps, mha) = setup(4, 2);
        mha.set_identity(&mut ps);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let x = g.leaf(Tensor::from_vec(1, 4, vec![0.3, -1.2, 0.7, 2.0]));
        let out = mha.forward(&mut g, &bp, x, x, x, None, None);
        assert_eq!(g.value(out.out), g.value(x));
        assert_eq!(g.value(out.weights).item(), 1.0);
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let (mut ps, mha) = setup(4, 2);
        mha.set_identity(&mut ps);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let row = vec![0.5, 1.5, -0.5, 0.25];
        let x = g.leaf(Tensor::from_vec(
            2,
            4,
            row.iter().chain(row.iter()).copied().collect(),
        ));
        let out = mha.forward(&mut g, &bp, x, x, x, None, None);
        let w = g.value(out.weights);
        for i in 0..2 {
            for j in 0..2 {
                assert!((w.at(i, j) - 0.5).abs() < 1e-12);
            }
        }
        // identical rows in, identical rows out
        assert_eq!(g.value(out.out).row(0), g.value(out.out).row(1));
    }

    #[test]
    fn weight_rows_sum_to_one_with_mask() {
        let (ps, mha) = setup(8, 4);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        use rand::{Rng, RngExt};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = g.leaf(Tensor::from_vec(
            5,
            8,
            (0..40).map(|_| rng.random::<f64>() - 0.5).collect(),
        ));
        let mask = vec![false, true, false, false, true];
        let out = mha.forward(&mut g, &bp, x, x, x, Some(&mask), None);
        let w = g.value(out.weights);
        for i in 0..5 {
            let s: f64 = w.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row {i} sums to {s}");
            assert_eq!(w.at(i, 1), 0.0);
            assert_eq!(w.at(i, 4), 0.0);
        }
    }

    #[test]
    fn output_in_convex_hull_of_values() {
        // Single head, identity output projection: the output row must equal
        // the weight-recombination of the value-projected rows.
        let (mut ps, mha) = setup(4, 1);
        mha.set_identity(&mut ps);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        use rand::{Rng, RngExt};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = g.leaf(Tensor::from_vec(
            3,
            4,
            (0..12).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        ));
        let q = g.leaf(Tensor::from_vec(
            1,
            4,
            (0..4).map(|_| rng.random::<f64>()).collect(),
        ));
        let out = mha.forward(&mut g, &bp, q, x, x, None, None);
        let w = g.value(out.weights);
        let xv = g.value(x);
        let total: f64 = w.row(0).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.row(0).iter().all(|&v| v >= 0.0));
        for j in 0..4 {
            let recombined: f64 = (0..3).map(|r| w.at(0, r) * xv.at(r, j)).sum();
            assert!((recombined - g.value(out.out).at(0, j)).abs() < 1e-12);
        }
    }
}
