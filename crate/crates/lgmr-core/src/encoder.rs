//! Local-global temporal encoder.
//!
//! Each layer splits the hidden sequence into non-overlapping windows of
//! length M, runs self-attention inside every window, pools each window into
//! a summary vector with a single-query cross-attention, lets the summaries
//! interact through a global self-attention, and fuses local and global
//! streams with a feed-forward block:
//!
//!   local_k  = w_k + SelfAttn(LN(w_k))               (within window k)
//!   summary_k = CrossAttn(q = LN(Avg(local_k)), local_k)  (+ mean-query residual
//!                                                     added before the output
//!                                                     projection)
//!   globals  = summaries + SelfAttn(LN(summaries))   (across windows)
//!   fused    = FFN(LN(Flatten(local + Rep(globals))))
//!
//! Sinusoidal positional encodings over the flattened timeline are added to
//! query/key projection inputs only; window summaries use the encoding of the
//! window's center position. Padded timesteps are masked out of every key set
//! and stripped from the fused output, so results are independent of padding.

use rand::Rng;

use crate::config::ModelConfig;
use crate::nn::{
    posenc, BoundParams, FeedForward, Graph, LayerNorm, Linear, MultiHeadAttention, ParamSet,
    Tensor, Var,
};

/// A sequence split into K = ceil(T/M) windows, the last zero-padded.
#[derive(Debug, Clone)]
pub struct WindowedFeatures {
    pub windows: Vec<Tensor>,
    pub m: usize,
    pub t: usize,
    pub pad_len: usize,
}

impl WindowedFeatures {
    pub fn num_windows(&self) -> usize {
        self.windows.len()
    }

    /// Padding mask for window k: true marks a zero-padded tail row.
    pub fn pad_mask(&self, k: usize) -> Vec<bool> {
        (0..self.m).map(|r| k * self.m + r >= self.t).collect()
    }
}

/// Splits a T x D sequence into ceil(T/M) windows of M rows, zero-padding the
/// tail. Concatenating the unpadded rows reproduces the input exactly.
pub fn split_windows(f: &Tensor, m: usize) -> WindowedFeatures {
    assert!(f.rows >= 1 && m >= 1, "split_windows needs T >= 1 and M >= 1");
    let k = f.rows.div_ceil(m);
    let mut windows = Vec::with_capacity(k);
    for w in 0..k {
        let mut win = Tensor::zeros(m, f.cols);
        for r in 0..m {
            let src = w * m + r;
            if src < f.rows {
                win.row_mut(r).copy_from_slice(f.row(src));
            }
        }
        windows.push(win);
    }
    WindowedFeatures {
        windows,
        m,
        t: f.rows,
        pad_len: k * m - f.rows,
    }
}

/// Inverse of [`split_windows`]: drops padding and concatenates.
pub fn unsplit_windows(w: &WindowedFeatures) -> Tensor {
    let cols = w.windows[0].cols;
    let mut out = Tensor::zeros(w.t, cols);
    for r in 0..w.t {
        out.row_mut(r).copy_from_slice(w.windows[r / w.m].row(r % w.m));
    }
    out
}

/// Parameters of one encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln_local: LayerNorm,
    pub local_attn: MultiHeadAttention,
    pub ln_summary: LayerNorm,
    pub summary_attn: MultiHeadAttention,
    pub ln_global: LayerNorm,
    pub global_attn: MultiHeadAttention,
    pub ln_fuse: LayerNorm,
    pub fuse_ffn: FeedForward,
}

impl EncoderLayer {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        EncoderLayer {
            ln_local: LayerNorm::init(ps, &format!("{name}.local_norm"), d),
            local_attn: MultiHeadAttention::init(ps, rng, &format!("{name}.local_attn"), d, cfg.heads),
            ln_summary: LayerNorm::init(ps, &format!("{name}.summary_norm"), d),
            summary_attn: MultiHeadAttention::init(
                ps,
                rng,
                &format!("{name}.summary_attn"),
                d,
                cfg.heads,
            ),
            ln_global: LayerNorm::init(ps, &format!("{name}.global_norm"), d),
            global_attn: MultiHeadAttention::init(
                ps,
                rng,
                &format!("{name}.global_attn"),
                d,
                cfg.heads,
            ),
            ln_fuse: LayerNorm::init(ps, &format!("{name}.fuse_norm"), d),
            fuse_ffn: FeedForward::init(ps, rng, &format!("{name}.fuse_ffn"), d, cfg.ffn_dim),
        }
    }

    /// Intra-window self-attention with residual; padded rows pass through
    /// unchanged and are masked out of the key set.
    pub fn local_attend(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        window: Var,
        pad_mask: &[bool],
        pos: Option<&Tensor>,
    ) -> Var {
        assert!(pad_mask.iter().any(|&m| !m), "all-padded window");
        let normed = self.ln_local.forward(g, bp, window);
        let qk_in = match pos {
            Some(p) => {
                let pv = g.leaf(p.clone());
                g.add(normed, pv)
            }
            None => normed,
        };
        let attn = self
            .local_attn
            .forward(g, bp, qk_in, qk_in, normed, Some(pad_mask), None);
        let masked = g.zero_rows(attn.out, pad_mask);
        g.add(window, masked)
    }

    /// Attention-pooled window summary: the masked mean row queries the
    /// window and is added back before the output projection.
    pub fn window_summary(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        local: Var,
        pad_mask: &[bool],
        pos: Option<&Tensor>,
    ) -> Var {
        assert!(pad_mask.iter().any(|&m| !m), "window summary over zero rows");
        let mean_q = g.mean_rows(local, Some(pad_mask));
        let q_in = self.ln_summary.forward(g, bp, mean_q);
        let k_in = match pos {
            Some(p) => {
                let pv = g.leaf(p.clone());
                g.add(local, pv)
            }
            None => local,
        };
        let attn =
            self.summary_attn
                .forward(g, bp, q_in, k_in, local, Some(pad_mask), Some(mean_q));
        attn.out
    }

    /// Self-attention across window summaries with residual; fully padded
    /// windows are masked out of the key set.
    pub fn global_attend(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        globals: Var,
        window_mask: &[bool],
        pos: Option<&Tensor>,
    ) -> Var {
        let normed = self.ln_global.forward(g, bp, globals);
        let qk_in = match pos {
            Some(p) => {
                let pv = g.leaf(p.clone());
                g.add(normed, pv)
            }
            None => normed,
        };
        let attn = self
            .global_attn
            .forward(g, bp, qk_in, qk_in, normed, Some(window_mask), None);
        let masked = g.zero_rows(attn.out, window_mask);
        g.add(globals, masked)
    }

    /// FFN(LN(Flatten(local + Rep(globals)))), keeping all K*M rows; callers
    /// strip padding afterwards.
    pub fn fuse_local_global(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        locals: &[Var],
        globals: Var,
    ) -> Var {
        let mut merged = Vec::with_capacity(locals.len());
        for (k, &local) in locals.iter().enumerate() {
            let grow = g.slice_rows(globals, k, 1);
            merged.push(g.add_row_broadcast(local, grow));
        }
        let flat = if merged.len() == 1 {
            merged[0]
        } else {
            g.concat_rows(&merged)
        };
        let normed = self.ln_fuse.forward(g, bp, flat);
        self.fuse_ffn.forward(g, bp, normed)
    }

    /// One full layer over a K*M-row hidden sequence.
    fn forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        x: Var,
        m: usize,
        valid_len: usize,
        pos_timeline: &Tensor,
        pos_windows: &Tensor,
    ) -> Var {
        let t_pad = g.value(x).rows;
        let k = t_pad / m;
        let d = g.value(x).cols;

        let mut locals = Vec::with_capacity(k);
        let mut summaries = Vec::with_capacity(k);
        let mut window_mask = Vec::with_capacity(k);
        for w in 0..k {
            let win = g.slice_rows(x, w * m, m);
            let pad_mask: Vec<bool> = (0..m).map(|r| w * m + r >= valid_len).collect();
            let fully_padded = pad_mask.iter().all(|&p| p);
            window_mask.push(fully_padded);
            if fully_padded {
                locals.push(win);
                summaries.push(g.leaf(Tensor::zeros(1, d)));
                continue;
            }
            let mut pos = Tensor::zeros(m, d);
            for r in 0..m {
                let src = (w * m + r).min(pos_timeline.rows - 1);
                pos.row_mut(r).copy_from_slice(pos_timeline.row(src));
            }
            let local = self.local_attend(g, bp, win, &pad_mask, Some(&pos));
            let summary = self.window_summary(g, bp, local, &pad_mask, Some(&pos));
            locals.push(local);
            summaries.push(summary);
        }

        let stacked = if summaries.len() == 1 {
            summaries[0]
        } else {
            g.concat_rows(&summaries)
        };
        let globals = self.global_attend(g, bp, stacked, &window_mask, Some(pos_windows));
        self.fuse_local_global(g, bp, &locals, globals)
    }
}

/// The full encoder: input projection plus stacked local-global layers.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub input_proj: Linear,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, cfg: &ModelConfig, video_dim: usize) -> Self {
        let input_proj = Linear::init(ps, rng, "encoder.input_proj", video_dim, cfg.hidden_dim);
        let layers = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::init(ps, rng, &format!("encoder.layer{i}"), cfg))
            .collect();
        Encoder { input_proj, layers }
    }

    /// Encodes a video feature sequence. `video` holds T_total rows of which
    /// the first `valid_len` are real; the rest are batch padding. Returns the
    /// valid_len x D hidden sequence.
    pub fn forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        video: Var,
        valid_len: usize,
        cfg: &ModelConfig,
    ) -> Var {
        let t_total = g.value(video).rows;
        assert!(valid_len >= 1 && valid_len <= t_total, "bad valid length");
        let m = cfg.window_len;
        let k = t_total.div_ceil(m);
        let t_pad = k * m;
        let d = cfg.hidden_dim;

        let mut x = self.input_proj.forward(g, bp, video);
        if t_pad > t_total {
            let pad = g.leaf(Tensor::zeros(t_pad - t_total, d));
            x = g.concat_rows(&[x, pad]);
        }

        let pos_timeline = posenc::timeline(t_pad, d);
        let pos_windows = posenc::window_centers(k, m, d);
        for layer in &self.layers {
            x = layer.forward(g, bp, x, m, valid_len, &pos_timeline, &pos_windows);
        }
        g.slice_rows(x, 0, valid_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> ModelConfig {
        ModelConfig::toy()
    }

    fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect(),
        )
    }

    #[test]
    fn split_exact_division() {
        let f = random_tensor(50, 4, 1);
        let w = split_windows(&f, 25);
        assert_eq!(w.num_windows(), 2);
        assert_eq!(w.pad_len, 0);
    }

    #[test]
    fn split_ceiling() {
        let f = random_tensor(26, 4, 2);
        let w = split_windows(&f, 25);
        assert_eq!(w.num_windows(), 2);
        assert_eq!(w.pad_len, 24);
        assert!(w.pad_mask(1)[1]);
        assert!(!w.pad_mask(1)[0]);
    }

    #[test]
    fn split_unsplit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = rng.random_range(1..=100);
            let m = rng.random_range(1..=30);
            let f = random_tensor(t, 3, rng.random());
            let back = unsplit_windows(&split_windows(&f, m));
            assert_eq!(back, f);
        }
    }

    fn layer_fixture(cfg: &ModelConfig, seed: u64) -> (ParamSet, EncoderLayer) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = EncoderLayer::init(&mut ps, &mut rng, "enc", cfg);
        (ps, layer)
    }

    #[test]
    fn local_attend_row_sums() {
        let cfg = toy_cfg();
        let (ps, layer) = layer_fixture(&cfg, 4);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let win = g.leaf(random_tensor(4, cfg.hidden_dim, 9));
        let pad = vec![false, false, false, true];
        let normed = layer.ln_local.forward(&mut g, &bp, win);
        let attn = layer
            .local_attn
            .forward(&mut g, &bp, normed, normed, normed, Some(&pad), None);
        let w = g.value(attn.weights);
        for i in 0..4 {
            let s: f64 = w.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert_eq!(w.at(i, 3), 0.0);
        }
    }

    #[test]
    fn local_attend_passes_padded_rows_through() {
        let cfg = toy_cfg();
        let (ps, layer) = layer_fixture(&cfg, 5);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let input = random_tensor(3, cfg.hidden_dim, 10);
        let win = g.leaf(input.clone());
        let pad = vec![false, false, true];
        let out = layer.local_attend(&mut g, &bp, win, &pad, None);
        assert_eq!(g.value(out).row(2), input.row(2));
        assert_ne!(g.value(out).row(0), input.row(0));
    }

    #[test]
    fn identical_rows_attend_symmetrically() {
        // two identical rows with identity projections produce equal outputs
        let cfg = toy_cfg();
        let (mut ps, layer) = layer_fixture(&cfg, 6);
        layer.local_attn.set_identity(&mut ps);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let row: Vec<f64> = (0..cfg.hidden_dim).map(|i| i as f64 * 0.1 - 0.3).collect();
        let x = g.leaf(Tensor::from_vec(
            2,
            cfg.hidden_dim,
            row.iter().chain(row.iter()).copied().collect(),
        ));
        let attn = layer.local_attn.forward(&mut g, &bp, x, x, x, None, None);
        assert_eq!(g.value(attn.out).row(0), g.value(attn.out).row(1));
    }

    #[test]
    fn window_summary_uniform_over_identical_rows() {
        // all rows equal x and identity projections: the cross-attention term
        // is the value projection of x (here identity), plus the mean-query
        // residual folded in before the (identity) output projection.
        let cfg = toy_cfg();
        let (mut ps, layer) = layer_fixture(&cfg, 7);
        layer.summary_attn.set_identity(&mut ps);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let row: Vec<f64> = (0..cfg.hidden_dim).map(|i| 0.2 * i as f64 - 0.5).collect();
        let x = g.leaf(Tensor::from_vec(
            3,
            cfg.hidden_dim,
            row.iter().cycle().take(3 * cfg.hidden_dim).copied().collect(),
        ));
        let q = g.leaf(Tensor::from_vec(1, cfg.hidden_dim, row.clone()));
        let attn = layer
            .summary_attn
            .forward(&mut g, &bp, q, x, x, None, None);
        for (o, r) in g.value(attn.out).row(0).iter().zip(&row) {
            assert!((o - r).abs() < 1e-12);
        }
        let w = g.value(attn.weights);
        for j in 0..3 {
            assert!((w.at(0, j) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn global_attend_permutation_equivariant_without_pos() {
        let cfg = toy_cfg();
        let (ps, layer) = layer_fixture(&cfg, 8);
        let base = random_tensor(4, cfg.hidden_dim, 11);
        let perm = [2usize, 0, 3, 1];
        let mut permuted = Tensor::zeros(4, cfg.hidden_dim);
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(dst).copy_from_slice(base.row(src));
        }
        let mask = vec![false; 4];

        let run = |input: &Tensor| -> Tensor {
            let mut g = Graph::new();
            let bp = BoundParams::bind(&mut g, &ps);
            let x = g.leaf(input.clone());
            let out = layer.global_attend(&mut g, &bp, x, &mask, None);
            g.value(out).clone()
        };
        let out_base = run(&base);
        let out_perm = run(&permuted);
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..cfg.hidden_dim {
                assert!((out_perm.at(dst, j) - out_base.at(src, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fuse_broadcast_matches_manual_add() {
        // zero globals leave fuse = FFN(LN(flatten(local)))
        let cfg = toy_cfg();
        let (ps, layer) = layer_fixture(&cfg, 12);
        let local = random_tensor(cfg.window_len, cfg.hidden_dim, 13);

        let run = |globals: Tensor| -> Tensor {
            let mut g = Graph::new();
            let bp = BoundParams::bind(&mut g, &ps);
            let l = g.leaf(local.clone());
            let gl = g.leaf(globals);
            let out = layer.fuse_local_global(&mut g, &bp, &[l], gl);
            g.value(out).clone()
        };
        let zero = run(Tensor::zeros(1, cfg.hidden_dim));

        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let l = g.leaf(local.clone());
        let normed = layer.ln_fuse.forward(&mut g, &bp, l);
        let direct = layer.fuse_ffn.forward(&mut g, &bp, normed);
        assert_eq!(&zero, g.value(direct));
    }

    fn encoder_fixture(cfg: &ModelConfig, dv: usize, seed: u64) -> (ParamSet, Encoder) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::init(&mut ps, &mut rng, cfg, dv);
        (ps, enc)
    }

    #[test]
    fn encode_output_shape_and_finite() {
        let cfg = toy_cfg();
        let (ps, enc) = encoder_fixture(&cfg, 5, 20);
        for t in [1usize, 2, 3, 5, 7, 26] {
            let mut g = Graph::new();
            let bp = BoundParams::bind(&mut g, &ps);
            let video = g.leaf(random_tensor(t, 5, 21 + t as u64));
            let out = enc.forward(&mut g, &bp, video, t, &cfg);
            let v = g.value(out);
            assert_eq!(v.rows, t);
            assert_eq!(v.cols, cfg.hidden_dim);
            assert!(v.is_finite());
        }
    }

    #[test]
    fn encode_single_window_when_t_below_m() {
        let mut cfg = toy_cfg();
        cfg.window_len = 25;
        let (ps, enc) = encoder_fixture(&cfg, 5, 22);
        let mut g = Graph::new();
        let bp = BoundParams::bind(&mut g, &ps);
        let video = g.leaf(random_tensor(5, 5, 23));
        let out = enc.forward(&mut g, &bp, video, 5, &cfg);
        assert_eq!(g.value(out).rows, 5);
        assert!(g.value(out).is_finite());
    }

    #[test]
    fn encode_zero_padding_invariance() {
        let cfg = toy_cfg();
        let (ps, enc) = encoder_fixture(&cfg, 5, 24);
        let t = 7usize;
        let video = random_tensor(t, 5, 25);

        let run = |input: &Tensor, valid: usize| -> Tensor {
            let mut g = Graph::new();
            let bp = BoundParams::bind(&mut g, &ps);
            let v = g.leaf(input.clone());
            let out = enc.forward(&mut g, &bp, v, valid, &cfg);
            g.value(out).clone()
        };
        let plain = run(&video, t);

        // pad to the next K*M multiple and beyond (adds a fully padded window)
        for extra in [2usize, 5, 8] {
            let mut padded = Tensor::zeros(t + extra, 5);
            padded.data[..t * 5].copy_from_slice(&video.data);
            let padded_out = run(&padded, t);
            assert_eq!(padded_out.rows, t);
            for k in 0..plain.data.len() {
                assert!(
                    (plain.data[k] - padded_out.data[k]).abs() < 1e-12,
                    "padding changed output at {k}"
                );
            }
        }
    }

    #[test]
    fn encode_deterministic() {
        let cfg = toy_cfg();
        let (ps, enc) = encoder_fixture(&cfg, 5, 26);
        let video = random_tensor(9, 5, 27);
        let run = || {
            let mut g = Graph::new();
            let bp = BoundParams::bind(&mut g, &ps);
            let v = g.leaf(video.clone());
            let out = enc.forward(&mut g, &bp, v, 9, &cfg);
            g.value(out).clone()
        };
        assert_eq!(run(), run());
    }
}
