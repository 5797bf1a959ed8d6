//! Training objectives: 1-D GIoU, the localization loss combining L1 and
//! GIoU terms, the cross-modal attention loss, and their weighted total with
//! per-layer deep supervision.
//!
//! Plain f64 versions back evaluation and the hand-checked oracles; graph
//! versions build the differentiable loss for training. Both compute the same
//! formulas:
//!
//!   loc = mean_i [ (1/lambda1) * L1_i + (1 - GIoU_i) ]      with L1 on (start, end)
//!   att = -mean_i log(sum_j m_ij * a_ij)                     floored at 1e-12
//!   total = lambda1 * mean_layers(loc) + lambda2 * mean_layers(att)

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval::NormalizedInterval;
use crate::nn::{Graph, Tensor, Var};
use crate::sample::AttentionMaskMatrix;

pub const ATTENTION_LOG_FLOOR: f64 = 1e-12;

/// 1-D generalized IoU in (-1, 1]: IoU minus the fraction of the smallest
/// enclosing interval not covered by the union. Two identical degenerate
/// intervals define GIoU = 1.
pub fn giou_1d(pred: NormalizedInterval, gt: NormalizedInterval) -> f64 {
    let inter = (pred.end.min(gt.end) - pred.start.max(gt.start)).max(0.0);
    let len_p = pred.length();
    let len_g = gt.length();
    let union = len_p + len_g - inter;
    let enclose = pred.end.max(gt.end) - pred.start.min(gt.start);
    if enclose <= 0.0 {
        return 1.0; // both degenerate and identical
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (enclose - union) / enclose
}

/// Plain temporal IoU of two normalized intervals.
pub fn iou_1d(pred: NormalizedInterval, gt: NormalizedInterval) -> f64 {
    let inter = (pred.end.min(gt.end) - pred.start.max(gt.start)).max(0.0);
    let union = pred.length() + gt.length() - inter;
    if union > 0.0 {
        inter / union
    } else if pred.start == gt.start {
        1.0
    } else {
        0.0
    }
}

/// mean_i [ (1/lambda1) * (|s_i - s*_i| + |e_i - e*_i|) + (1 - GIoU_i) ].
pub fn localization_loss(
    preds: &[NormalizedInterval],
    gts: &[NormalizedInterval],
    lambda1: f64,
) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("localization loss over zero pairs"));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(gts) {
        let l1 = (p.start - t.start).abs() + (p.end - t.end).abs();
        total += l1 / lambda1 + (1.0 - giou_1d(*p, *t));
    }
    Ok(total / preds.len() as f64)
}

/// -mean_i log(sum_j m_ij a_ij), the inner sum floored at 1e-12. Rows of `a`
/// must sum to 1; every mask row must contain at least one entry.
pub fn attention_loss(a: &Tensor, mask: &AttentionMaskMatrix) -> Result<f64> {
    if a.rows != mask.n || a.cols != mask.t {
        return Err(Error::invalid(format!(
            "attention map {}x{} vs mask {}x{}",
            a.rows, a.cols, mask.n, mask.t
        )));
    }
    let mut total = 0.0;
    for i in 0..mask.n {
        let row_mask = mask.row(i);
        if row_mask.iter().all(|&m| m == 0) {
            return Err(Error::invalid(format!(
                "mask row {i} is all zero; widen the ground truth to a bin"
            )));
        }
        let inside: f64 = a
            .row(i)
            .iter()
            .zip(row_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(w, _)| w)
            .sum();
        total += -(inside.max(ATTENTION_LOG_FLOOR)).ln();
    }
    Ok(total / mask.n as f64)
}

/// Per-step loss decomposition written to the metrics log.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    /// Final-layer mean L1 term.
    pub l1: f64,
    /// Final-layer mean GIoU loss term (1 - GIoU).
    pub giou: f64,
    /// Localization loss averaged over supervised layers.
    pub loc: f64,
    /// Attention loss averaged over supervised layers.
    pub att: f64,
    /// lambda1 * loc + lambda2 * att.
    pub total: f64,
    /// (loc, att) per supervised layer.
    pub per_layer: Vec<(f64, f64)>,
}

/// Plain-f64 total loss over per-layer predictions and attention maps.
pub fn total_loss(
    per_layer_preds: &[Vec<NormalizedInterval>],
    per_layer_attn: &[Tensor],
    gts: &[NormalizedInterval],
    mask: &AttentionMaskMatrix,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossBreakdown> {
    if per_layer_preds.is_empty() || per_layer_preds.len() != per_layer_attn.len() {
        return Err(Error::invalid("need >= 1 supervised decoder layer"));
    }
    let mut per_layer = Vec::with_capacity(per_layer_preds.len());
    for (preds, attn) in per_layer_preds.iter().zip(per_layer_attn) {
        let loc = localization_loss(preds, gts, lambda1)?;
        let att = attention_loss(attn, mask)?;
        per_layer.push((loc, att));
    }
    let layers = per_layer.len() as f64;
    let loc = per_layer.iter().map(|(l, _)| l).sum::<f64>() / layers;
    let att = per_layer.iter().map(|(_, a)| a).sum::<f64>() / layers;

    let final_preds = per_layer_preds.last().unwrap();
    let mut l1 = 0.0;
    let mut giou = 0.0;
    for (p, t) in final_preds.iter().zip(gts) {
        l1 += (p.start - t.start).abs() + (p.end - t.end).abs();
        giou += 1.0 - giou_1d(*p, *t);
    }
    l1 /= final_preds.len() as f64;
    giou /= final_preds.len() as f64;

    Ok(LossBreakdown {
        l1,
        giou,
        loc,
        att,
        total: lambda1 * loc + lambda2 * att,
        per_layer,
    })
}

// ---- graph (differentiable) versions --------------------------------------

/// Builds the localization loss for one layer from (center, width) columns
/// (N x 1 each) against constant ground-truth starts/ends.
pub fn localization_loss_graph(
    g: &mut Graph,
    center: Var,
    width: Var,
    gt: &[NormalizedInterval],
    lambda1: f64,
) -> Var {
    let n = gt.len();
    assert_eq!(g.value(center).rows, n, "prediction count mismatch");
    let gt_start = g.leaf(Tensor::from_vec(n, 1, gt.iter().map(|i| i.start).collect()));
    let gt_end = g.leaf(Tensor::from_vec(n, 1, gt.iter().map(|i| i.end).collect()));

    let half_width = g.scale(width, 0.5);
    let pred_start = g.sub(center, half_width);
    let pred_end = g.add(center, half_width);

    // L1 on (start, end)
    let ds = g.sub(pred_start, gt_start);
    let de = g.sub(pred_end, gt_end);
    let l1s = g.abs(ds);
    let l1e = g.abs(de);
    let l1 = g.add(l1s, l1e); // N x 1

    // GIoU
    let inter_hi = g.min2(pred_end, gt_end);
    let inter_lo = g.max2(pred_start, gt_start);
    let inter_raw = g.sub(inter_hi, inter_lo);
    let inter = g.clamp_min(inter_raw, 0.0);
    let len_p = g.sub(pred_end, pred_start);
    let len_g = g.sub(gt_end, gt_start);
    let lens = g.add(len_p, len_g);
    let union = g.sub(lens, inter); // > 0: predicted width is floored
    let enc_hi = g.max2(pred_end, gt_end);
    let enc_lo = g.min2(pred_start, gt_start);
    let enclose_raw = g.sub(enc_hi, enc_lo);
    let enclose = g.clamp_min(enclose_raw, 1e-9);
    let iou = g.div(inter, union);
    let gap = g.sub(enclose, union);
    let gap_frac = g.div(gap, enclose);
    let giou = g.sub(iou, gap_frac);
    let one = g.leaf(Tensor::from_vec(n, 1, vec![1.0; n]));
    let giou_loss = g.sub(one, giou); // N x 1

    let l1_scaled = g.scale(l1, 1.0 / lambda1);
    let per_query = g.add(l1_scaled, giou_loss);
    g.mean_all(per_query)
}

/// Builds the attention loss for one layer's N x T weight map.
pub fn attention_loss_graph(g: &mut Graph, attn: Var, mask: &AttentionMaskMatrix) -> Var {
    let (n, t) = (mask.n, mask.t);
    assert_eq!(g.value(attn).rows, n, "attention row count mismatch");
    assert_eq!(g.value(attn).cols, t, "attention column count mismatch");
    for i in 0..n {
        assert!(
            mask.row(i).iter().any(|&m| m == 1),
            "mask row {i} is all zero"
        );
    }
    let mask_t = Tensor::from_vec(
        n,
        t,
        mask.mask.iter().map(|&m| m as f64).collect(),
    );
    let mv = g.leaf(mask_t);
    let inside = g.mul(attn, mv);
    let row_mass = g.sum_cols(inside); // N x 1
    let floored = g.clamp_min(row_mass, ATTENTION_LOG_FLOOR);
    let logs = g.log(floored);
    let mean = g.mean_all(logs);
    g.scale(mean, -1.0)
}

/// Combines per-layer localization and attention losses into the weighted
/// total: lambda1 * mean(loc) + lambda2 * mean(att).
pub fn total_loss_graph(
    g: &mut Graph,
    per_layer_loc: &[Var],
    per_layer_att: &[Var],
    lambda1: f64,
    lambda2: f64,
) -> Var {
    assert!(!per_layer_loc.is_empty());
    assert_eq!(per_layer_loc.len(), per_layer_att.len());
    let layers = per_layer_loc.len() as f64;
    let mut loc_sum = per_layer_loc[0];
    for &l in &per_layer_loc[1..] {
        loc_sum = g.add(loc_sum, l);
    }
    let mut att_sum = per_layer_att[0];
    for &a in &per_layer_att[1..] {
        att_sum = g.add(att_sum, a);
    }
    let loc = g.scale(loc_sum, lambda1 / layers);
    let att = g.scale(att_sum, lambda2 / layers);
    g.add(loc, att)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Interval;

    fn ni(s: f64, e: f64) -> NormalizedInterval {
        NormalizedInterval::new(s, e).unwrap()
    }

    #[test]
    fn giou_identical_is_one() {
        let a = ni(0.2, 0.6);
        assert_eq!(giou_1d(a, a), 1.0);
    }

    #[test]
    fn giou_disjoint_hand_value() {
        // [0,0.2] vs [0.8,1.0]: IoU 0, gap 0.6, enclose 1.0 -> -0.6
        let v = giou_1d(ni(0.0, 0.2), ni(0.8, 1.0));
        assert!((v + 0.6).abs() < 1e-12);
    }

    #[test]
    fn giou_touching_is_zero() {
        let v = giou_1d(ni(0.0, 0.5), ni(0.5, 1.0));
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn giou_degenerate_pair() {
        assert_eq!(giou_1d(ni(0.3, 0.3), ni(0.3, 0.3)), 1.0);
        assert!(giou_1d(ni(0.3, 0.3), ni(0.7, 0.7)) < 0.0);
    }

    #[test]
    fn giou_never_exceeds_iou() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mut p = [rng.random::<f64>(), rng.random::<f64>()];
            let mut t = [rng.random::<f64>(), rng.random::<f64>()];
            p.sort_by(f64::total_cmp);
            t.sort_by(f64::total_cmp);
            let (p, t) = (ni(p[0], p[1]), ni(t[0], t[1]));
            let (giou, iou) = (giou_1d(p, t), iou_1d(p, t));
            assert!(giou <= iou + 1e-12);
            // equality iff the union covers the enclosing interval
            let enclose = p.end.max(t.end) - p.start.min(t.start);
            let union = p.length() + t.length()
                - (p.end.min(t.end) - p.start.max(t.start)).max(0.0);
            if (giou - iou).abs() < 1e-12 {
                assert!((enclose - union).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn localization_perfect_is_zero() {
        let preds = vec![ni(0.1, 0.4), ni(0.5, 0.9)];
        assert_eq!(localization_loss(&preds, &preds, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn localization_hand_value() {
        // [0,0.5] vs [0,1.0]: L1 = 0.5, GIoU = 0.5, loss = 0.5 + 0.5 = 1.0
        let loss = localization_loss(&[ni(0.0, 0.5)], &[ni(0.0, 1.0)], 1.0).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn localization_permutation_invariant() {
        let preds = vec![ni(0.0, 0.2), ni(0.4, 0.6), ni(0.7, 1.0)];
        let gts = vec![ni(0.1, 0.3), ni(0.35, 0.65), ni(0.6, 0.9)];
        let a = localization_loss(&preds, &gts, 1.0).unwrap();
        let perm = [2usize, 0, 1];
        let preds_p: Vec<_> = perm.iter().map(|&i| preds[i]).collect();
        let gts_p: Vec<_> = perm.iter().map(|&i| gts[i]).collect();
        let b = localization_loss(&preds_p, &gts_p, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn localization_rejects_length_mismatch() {
        assert!(localization_loss(&[ni(0.0, 1.0)], &[], 1.0).is_err());
    }

    fn uniform_attention(n: usize, t: usize) -> Tensor {
        Tensor::from_vec(n, t, vec![1.0 / t as f64; n * t])
    }

    fn mask_from(gts: &[Interval], duration: f64, t: usize) -> AttentionMaskMatrix {
        AttentionMaskMatrix::from_ground_truth(gts, duration, t).unwrap()
    }

    #[test]
    fn attention_full_containment_is_zero() {
        // all mass inside the ground truth for every query
        let gts = vec![Interval::new(0.0, 100.0).unwrap()];
        let mask = mask_from(&gts, 100.0, 10);
        let a = uniform_attention(1, 10);
        assert!(attention_loss(&a, &mask).unwrap().abs() < 1e-12);
    }

    #[test]
    fn attention_uniform_half_mask() {
        // uniform over T=10 with a 5-bin mask -> -log(0.5)
        let gts = vec![Interval::new(0.0, 50.0).unwrap()];
        let mask = mask_from(&gts, 100.0, 10);
        assert_eq!(mask.row(0).iter().map(|&m| m as usize).sum::<usize>(), 5);
        let a = uniform_attention(1, 10);
        let loss = attention_loss(&a, &mask).unwrap();
        assert!((loss - 0.5f64.ln().abs()).abs() < 1e-9);
        assert!((loss - 0.693_147_180_559_945_3).abs() < 1e-9);
    }

    #[test]
    fn attention_loss_increases_as_mass_leaves_mask() {
        let gts = vec![Interval::new(0.0, 50.0).unwrap()];
        let mask = mask_from(&gts, 100.0, 10);
        let mut prev = 0.0;
        for shift in 1..=8 {
            let inside = 0.5 - 0.05 * shift as f64;
            let mut a = Tensor::zeros(1, 10);
            for j in 0..5 {
                a.set(0, j, inside / 5.0);
            }
            for j in 5..10 {
                a.set(0, j, (1.0 - inside) / 5.0);
            }
            let loss = attention_loss(&a, &mask).unwrap();
            assert!(loss > prev, "loss must increase as in-mask mass shrinks");
            prev = loss;
        }
    }

    #[test]
    fn attention_rejects_empty_mask_row() {
        let mask = AttentionMaskMatrix {
            n: 1,
            t: 4,
            mask: vec![0, 0, 0, 0],
        };
        let a = uniform_attention(1, 4);
        assert!(attention_loss(&a, &mask).is_err());
    }

    #[test]
    fn total_loss_weights_and_linearity() {
        let gts_iv = vec![Interval::new(10.0, 60.0).unwrap()];
        let mask = mask_from(&gts_iv, 100.0, 10);
        let gts = vec![ni(0.1, 0.6)];
        let preds = vec![vec![ni(0.2, 0.5)], vec![ni(0.15, 0.58)]];
        let attn = vec![uniform_attention(1, 10), uniform_attention(1, 10)];

        let zero_att = total_loss(&preds, &attn, &gts, &mask, 1.0, 0.0).unwrap();
        assert!((zero_att.total - zero_att.loc).abs() < 1e-12);

        let base = total_loss(&preds, &attn, &gts, &mask, 1.0, 0.2).unwrap();
        let double = total_loss(&preds, &attn, &gts, &mask, 1.0, 0.4).unwrap();
        assert!((double.total - base.total - 0.2 * base.att).abs() < 1e-12);
        assert_eq!(base.per_layer.len(), 2);
        assert!((base.total - (base.loc + 0.2 * base.att)).abs() < 1e-12);
    }

    #[test]
    fn single_layer_per_layer_entry_matches() {
        let gts_iv = vec![Interval::new(0.0, 50.0).unwrap()];
        let mask = mask_from(&gts_iv, 100.0, 10);
        let gts = vec![ni(0.0, 0.5)];
        let preds = vec![vec![ni(0.1, 0.4)]];
        let attn = vec![uniform_attention(1, 10)];
        let b = total_loss(&preds, &attn, &gts, &mask, 1.0, 0.2).unwrap();
        assert_eq!(b.per_layer.len(), 1);
        assert!((b.per_layer[0].0 - b.loc).abs() < 1e-12);
        assert!((b.per_layer[0].1 - b.att).abs() < 1e-12);
    }

    #[test]
    fn graph_losses_match_plain_versions() {
        use crate::nn::Graph;
        let gts = vec![ni(0.1, 0.5), ni(0.6, 0.9)];
        let centers = vec![0.25, 0.8];
        let widths = vec![0.3, 0.15];

        let mut g = Graph::new();
        let c = g.leaf(Tensor::from_vec(2, 1, centers.clone()));
        let w = g.leaf(Tensor::from_vec(2, 1, widths.clone()));
        let loss_var = localization_loss_graph(&mut g, c, w, &gts, 1.0);
        let graph_loss = g.value(loss_var).item();

        let preds: Vec<NormalizedInterval> = centers
            .iter()
            .zip(&widths)
            .map(|(&c, &w)| ni(c - w / 2.0, c + w / 2.0))
            .collect();
        let plain = localization_loss(&preds, &gts, 1.0).unwrap();
        assert!((graph_loss - plain).abs() < 1e-12);

        // attention side
        let gts_iv = vec![
            Interval::new(10.0, 50.0).unwrap(),
            Interval::new(60.0, 90.0).unwrap(),
        ];
        let mask = mask_from(&gts_iv, 100.0, 10);
        let a = uniform_attention(2, 10);
        let mut g = Graph::new();
        let av = g.leaf(a.clone());
        let att_var = attention_loss_graph(&mut g, av, &mask);
        let plain_att = attention_loss(&a, &mask).unwrap();
        assert!((g.value(att_var).item() - plain_att).abs() < 1e-12);
    }
}
