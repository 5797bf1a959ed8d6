//! Local-global iterative decoder.
//!
//! Paragraph tokens are projected to the hidden dimension; the token mean is
//! each paragraph's global query. E learnable seed vectors extract local
//! subparagraph queries per paragraph through a single cross-attention layer:
//!
//!   queries = LN(global W1 + seeds W2)
//!   locals  = CrossAttn(queries, tokens, tokens), then an FFN sub-layer
//!
//! Each decoder layer then runs, in order: (a) intra-level self-attention
//! within each paragraph's local queries and across the global queries,
//! (b) cross-modal cross-attention from local and global queries into the
//! encoded video (recording the head-averaged global-to-video weights),
//! (c) cross-level cross-attention from local queries into the globals and
//! from each paragraph's locals into its own global query, and one FFN
//! sub-layer per stream. Every sub-layer is pre-norm with a residual.
//!
//! Sinusoidal positional encodings enter only on the video key side.
//!
//! Interval heads: auxiliary layers predict from the shared-normalized global
//! query; the final layer predicts from concat(mean of locals, global). Both
//! heads squash their two logits through a sigmoid into (center, width),
//! width floored at 1e-4.

use rand::Rng;

use crate::config::ModelConfig;
use crate::interval::CenterWidth;
use crate::nn::{
    BoundParams, FeedForward, Graph, LayerNorm, Linear, MultiHeadAttention, ParamSet, PId, Tensor,
    Var,
};

pub const MIN_PREDICTED_WIDTH: f64 = 1e-4;

/// Per-layer decoder state: local queries per paragraph (E x D each), global
/// queries (N x D), and the recorded global-to-video attention maps.
pub struct DecoderState {
    pub local: Vec<Var>,
    pub global: Var,
    /// Head-averaged N x T attention weights, one entry per executed layer.
    pub attn_global_video: Vec<Var>,
}

/// Learned projections of Eq-style query construction: global W1 + seeds W2.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionPair {
    pub w1: PId,
    pub w2: PId,
}

/// Extracts E subparagraph queries from one paragraph's token features.
#[derive(Debug, Clone)]
pub struct SubparagraphExtractor {
    pub seeds: PId,
    pub proj: ProjectionPair,
    pub ln_query: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl SubparagraphExtractor {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        SubparagraphExtractor {
            seeds: ps.add(
                format!("{name}.seeds"),
                crate::nn::init::xavier_uniform(rng, cfg.subparagraph_count, d),
            ),
            proj: ProjectionPair {
                w1: ps.add(format!("{name}.global_proj"), crate::nn::init::xavier_uniform(rng, d, d)),
                w2: ps.add(format!("{name}.seed_proj"), crate::nn::init::xavier_uniform(rng, d, d)),
            },
            ln_query: LayerNorm::init(ps, &format!("{name}.query_norm"), d),
            attn: MultiHeadAttention::init(ps, rng, &format!("{name}.attn"), d, cfg.heads),
            ln_ffn: LayerNorm::init(ps, &format!("{name}.ffn_norm"), d),
            ffn: FeedForward::init(ps, rng, &format!("{name}.ffn"), d, cfg.ffn_dim),
        }
    }

    /// queries = LN(global W1 + seeds W2), then one cross-attention over the
    /// paragraph's tokens with residual, then an FFN sub-layer.
    pub fn forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        global_q: Var,
        tokens: Var,
        token_pos: Option<&Tensor>,
    ) -> Var {
        let gw = g.matmul(global_q, bp.var(self.proj.w1)); // 1 x D
        let sw = g.matmul(bp.var(self.seeds), bp.var(self.proj.w2)); // E x D
        let combined = g.add_row_broadcast(sw, gw);
        let queries = self.ln_query.forward(g, bp, combined);

        let k_in = match token_pos {
            Some(p) => {
                let pv = g.leaf(p.clone());
                g.add(tokens, pv)
            }
            None => tokens,
        };
        let attn = self.attn.forward(g, bp, queries, k_in, tokens, None, None);
        let x = g.add(queries, attn.out);
        let normed = self.ln_ffn.forward(g, bp, x);
        let f = self.ffn.forward(g, bp, normed);
        g.add(x, f)
    }
}

/// One iteration of local-global reasoning.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln_local_self: LayerNorm,
    pub local_self_attn: MultiHeadAttention,
    pub ln_global_self: LayerNorm,
    pub global_self_attn: MultiHeadAttention,
    pub ln_local_video: LayerNorm,
    pub local_video_attn: MultiHeadAttention,
    pub ln_global_video: LayerNorm,
    pub global_video_attn: MultiHeadAttention,
    pub ln_local_from_global: LayerNorm,
    pub local_from_global_attn: MultiHeadAttention,
    pub ln_global_from_local: LayerNorm,
    pub global_from_local_attn: MultiHeadAttention,
    pub ln_local_ffn: LayerNorm,
    pub local_ffn: FeedForward,
    pub ln_global_ffn: LayerNorm,
    pub global_ffn: FeedForward,
}

impl DecoderLayer {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        let h = cfg.heads;
        DecoderLayer {
            ln_local_self: LayerNorm::init(ps, &format!("{name}.local_self_norm"), d),
            local_self_attn: MultiHeadAttention::init(ps, rng, &format!("{name}.local_self_attn"), d, h),
            ln_global_self: LayerNorm::init(ps, &format!("{name}.global_self_norm"), d),
            global_self_attn: MultiHeadAttention::init(ps, rng, &format!("{name}.global_self_attn"), d, h),
            ln_local_video: LayerNorm::init(ps, &format!("{name}.local_video_norm"), d),
            local_video_attn: MultiHeadAttention::init(ps, rng, &format!("{name}.local_video_attn"), d, h),
            ln_global_video: LayerNorm::init(ps, &format!("{name}.global_video_norm"), d),
            global_video_attn: MultiHeadAttention::init(ps, rng, &format!("{name}.global_video_attn"), d, h),
            ln_local_from_global: LayerNorm::init(ps, &format!("{name}.local_from_global_norm"), d),
            local_from_global_attn: MultiHeadAttention::init(
                ps, rng, &format!("{name}.local_from_global_attn"), d, h,
            ),
            ln_global_from_local: LayerNorm::init(ps, &format!("{name}.global_from_local_norm"), d),
            global_from_local_attn: MultiHeadAttention::init(
                ps, rng, &format!("{name}.global_from_local_attn"), d, h,
            ),
            ln_local_ffn: LayerNorm::init(ps, &format!("{name}.local_ffn_norm"), d),
            local_ffn: FeedForward::init(ps, rng, &format!("{name}.local_ffn"), d, cfg.ffn_dim),
            ln_global_ffn: LayerNorm::init(ps, &format!("{name}.global_ffn_norm"), d),
            global_ffn: FeedForward::init(ps, rng, &format!("{name}.global_ffn"), d, cfg.ffn_dim),
        }
    }

    /// Runs one layer. `video` is the T x D encoded sequence; `video_pos` its
    /// positional table (added on the key side only). Returns the updated
    /// state and records this layer's global-to-video attention.
    pub fn forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        state: DecoderState,
        video: Var,
        video_pos: &Tensor,
    ) -> DecoderState {
        let n = state.local.len();
        assert!(n >= 1, "decoder needs N >= 1 paragraphs");
        assert!(g.value(video).rows >= 1, "decoder needs T >= 1");
        let mut locals = state.local;
        let mut global = state.global;
        let mut attn_maps = state.attn_global_video;

        // (a) intra-level: self-attention within each paragraph's locals,
        // then across the N global queries.
        for l in locals.iter_mut() {
            let normed = self.ln_local_self.forward(g, bp, *l);
            let a = self
                .local_self_attn
                .forward(g, bp, normed, normed, normed, None, None);
            *l = g.add(*l, a.out);
        }
        {
            let normed = self.ln_global_self.forward(g, bp, global);
            let a = self
                .global_self_attn
                .forward(g, bp, normed, normed, normed, None, None);
            global = g.add(global, a.out);
        }

        // (b) cross-modal: locals and globals query the encoded video.
        let video_keys = {
            let pv = g.leaf(video_pos.clone());
            g.add(video, pv)
        };
        for l in locals.iter_mut() {
            let q = self.ln_local_video.forward(g, bp, *l);
            let a = self
                .local_video_attn
                .forward(g, bp, q, video_keys, video, None, None);
            *l = g.add(*l, a.out);
        }
        {
            let q = self.ln_global_video.forward(g, bp, global);
            let a = self
                .global_video_attn
                .forward(g, bp, q, video_keys, video, None, None);
            global = g.add(global, a.out);
            attn_maps.push(a.weights);
        }

        // (c) cross-level: locals read from the global set; each global reads
        // from its own paragraph's locals.
        let mut new_locals = Vec::with_capacity(n);
        for &l in locals.iter() {
            let q = self.ln_local_from_global.forward(g, bp, l);
            let a = self
                .local_from_global_attn
                .forward(g, bp, q, global, global, None, None);
            new_locals.push(g.add(l, a.out));
        }
        locals = new_locals;
        {
            let mut rows = Vec::with_capacity(n);
            for (i, &l) in locals.iter().enumerate() {
                let gq = g.slice_rows(global, i, 1);
                let q = self.ln_global_from_local.forward(g, bp, gq);
                let a = self
                    .global_from_local_attn
                    .forward(g, bp, q, l, l, None, None);
                rows.push(g.add(gq, a.out));
            }
            global = if rows.len() == 1 {
                rows[0]
            } else {
                g.concat_rows(&rows)
            };
        }

        // FFN sub-layer per stream.
        for l in locals.iter_mut() {
            let normed = self.ln_local_ffn.forward(g, bp, *l);
            let f = self.local_ffn.forward(g, bp, normed);
            *l = g.add(*l, f);
        }
        {
            let normed = self.ln_global_ffn.forward(g, bp, global);
            let f = self.global_ffn.forward(g, bp, normed);
            global = g.add(global, f);
        }

        DecoderState {
            local: locals,
            global,
            attn_global_video: attn_maps,
        }
    }
}

/// Three-linear-layer MLP head producing two logits per query.
#[derive(Debug, Clone)]
pub struct IntervalHead {
    pub lin1: Linear,
    pub lin2: Linear,
    pub out: Linear,
}

impl IntervalHead {
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        IntervalHead {
            lin1: Linear::init(ps, rng, &format!("{name}.lin1"), input_dim, hidden),
            lin2: Linear::init(ps, rng, &format!("{name}.lin2"), hidden, hidden),
            out: Linear::init(ps, rng, &format!("{name}.out"), hidden, 2),
        }
    }

    /// Returns (center, width) columns, each N x 1, squashed into [0,1];
    /// width floored at [`MIN_PREDICTED_WIDTH`].
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: Var) -> (Var, Var) {
        let h = self.lin1.forward(g, bp, x);
        let h = g.relu(h);
        let h = self.lin2.forward(g, bp, h);
        let h = g.relu(h);
        let logits = self.out.forward(g, bp, h);
        let squashed = g.sigmoid(logits);
        let center = g.slice_cols(squashed, 0, 1);
        let width_raw = g.slice_cols(squashed, 1, 1);
        let width = g.clamp_min(width_raw, MIN_PREDICTED_WIDTH);
        (center, width)
    }
}

/// The full decoder: paragraph embedding, subparagraph extraction, layer
/// stack, and interval heads.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub text_proj: Linear,
    pub extractor: SubparagraphExtractor,
    pub layers: Vec<DecoderLayer>,
    /// Shared normalization applied to head inputs at every layer.
    pub head_norm: LayerNorm,
    pub aux_head: IntervalHead,
    pub final_head: IntervalHead,
}

/// Normalized (center, width) predictions for every supervised layer, plus
/// the recorded attention maps. Layer i < L-1 comes from the auxiliary head;
/// the last entry comes from the final concat head.
pub struct DecoderOutput {
    pub per_layer: Vec<(Var, Var)>,
    pub attn_global_video: Vec<Var>,
}

impl Decoder {
    pub fn init(ps: &mut ParamSet, rng: &mut impl Rng, cfg: &ModelConfig, text_dim: usize) -> Self {
        let d = cfg.hidden_dim;
        Decoder {
            text_proj: Linear::init(ps, rng, "decoder.text_proj", text_dim, d),
            extractor: SubparagraphExtractor::init(ps, rng, "decoder.extractor", cfg),
            layers: (0..cfg.decoder_layers)
                .map(|i| DecoderLayer::init(ps, rng, &format!("decoder.layer{i}"), cfg))
                .collect(),
            head_norm: LayerNorm::init(ps, "heads.shared_norm", d),
            aux_head: IntervalHead::init(ps, rng, "heads.aux", d, d),
            final_head: IntervalHead::init(ps, rng, "heads.final", 2 * d, d),
        }
    }

    /// Projects one paragraph's tokens and pools them into the global query.
    /// Linear projection of the token mean and the mean of projected tokens
    /// coincide exactly, so tokens are projected once and reused.
    pub fn embed_paragraph(&self, g: &mut Graph, bp: &BoundParams, tokens_raw: Var) -> (Var, Var) {
        assert!(g.value(tokens_raw).rows >= 1, "paragraph with no tokens");
        let projected = self.text_proj.forward(g, bp, tokens_raw);
        let global = g.mean_rows(projected, None);
        (projected, global)
    }

    /// Runs the full decoder over N paragraphs against the encoded video.
    pub fn forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        paragraphs_raw: &[Var],
        video: Var,
        video_pos: &Tensor,
    ) -> DecoderOutput {
        assert!(!paragraphs_raw.is_empty(), "decoder needs N >= 1 paragraphs");
        let mut locals = Vec::with_capacity(paragraphs_raw.len());
        let mut global_rows = Vec::with_capacity(paragraphs_raw.len());
        for &tokens_raw in paragraphs_raw {
            let (tokens, global) = self.embed_paragraph(g, bp, tokens_raw);
            let local = self.extractor.forward(g, bp, global, tokens, None);
            locals.push(local);
            global_rows.push(global);
        }
        let global = if global_rows.len() == 1 {
            global_rows[0]
        } else {
            g.concat_rows(&global_rows)
        };

        let mut state = DecoderState {
            local: locals,
            global,
            attn_global_video: Vec::new(),
        };

        let num_layers = self.layers.len();
        let mut per_layer = Vec::with_capacity(num_layers);
        for (li, layer) in self.layers.iter().enumerate() {
            state = layer.forward(g, bp, state, video, video_pos);
            if li + 1 < num_layers {
                let normed = self.head_norm.forward(g, bp, state.global);
                per_layer.push(self.aux_head.forward(g, bp, normed));
            } else {
                per_layer.push(self.predict_final(g, bp, &state));
            }
        }

        DecoderOutput {
            per_layer,
            attn_global_video: state.attn_global_video,
        }
    }

    /// Final head input: concat(mean over E of locals, global), each stream
    /// passed through the shared head normalization.
    fn predict_final(&self, g: &mut Graph, bp: &BoundParams, state: &DecoderState) -> (Var, Var) {
        let mut rows = Vec::with_capacity(state.local.len());
        for (i, &l) in state.local.iter().enumerate() {
            let local_mean = g.mean_rows(l, None);
            let gq = g.slice_rows(state.global, i, 1);
            let local_n = self.head_norm.forward(g, bp, local_mean);
            let global_n = self.head_norm.forward(g, bp, gq);
            rows.push(g.concat_cols(&[local_n, global_n]));
        }
        let x = if rows.len() == 1 {
            rows[0]
        } else {
            g.concat_rows(&rows)
        };
        self.final_head.forward(g, bp, x)
    }
}

/// Reads predictions out of the graph as plain center/width values.
pub fn read_predictions(g: &Graph, pred: &(Var, Var)) -> Vec<CenterWidth> {
    let centers = g.value(pred.0);
    let widths = g.value(pred.1);
    (0..centers.rows)
        .map(|i| CenterWidth {
            center: centers.at(i, 0),
            width: widths.at(i, 0),
        })
        .collect()
}
