//! Analytic multiply-accumulate estimates for one encoder layer.
//!
//! Both encoder variants share the per-row costs (QKV/output projections and
//! the feed-forward block); they differ in the attention score and weighted
//! sum terms:
//!
//!   common       = 4*T*D^2 + 2*T*D*F
//!   vanilla full = 2*T^2*D
//!   local-global = 2*K*M^2*D (intra-window) + 2*K*M*D (summary) + 2*K^2*D (global)
//!
//! with K = ceil(T/M). Softmax and normalization costs are ignored.

use crate::config::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    LocalGlobal,
    VanillaFull,
}

/// Multiply-accumulate count of one encoder layer over a length-T sequence.
pub fn flops_estimate(kind: EncoderKind, t: usize, cfg: &ModelConfig) -> f64 {
    assert!(t >= 1, "flops estimate needs T >= 1");
    let tf = t as f64;
    let d = cfg.hidden_dim as f64;
    let f = cfg.ffn_dim as f64;
    let common = 4.0 * tf * d * d + 2.0 * tf * d * f;
    let attention = match kind {
        EncoderKind::VanillaFull => 2.0 * tf * tf * d,
        EncoderKind::LocalGlobal => {
            let m = cfg.window_len as f64;
            let k = t.div_ceil(cfg.window_len) as f64;
            2.0 * k * m * m * d + 2.0 * k * m * d + 2.0 * k * k * d
        }
    };
    common + attention
}

/// local-global / vanilla cost ratio at sequence length T.
pub fn flops_ratio(t: usize, cfg: &ModelConfig) -> f64 {
    flops_estimate(EncoderKind::LocalGlobal, t, cfg)
        / flops_estimate(EncoderKind::VanillaFull, t, cfg)
}
