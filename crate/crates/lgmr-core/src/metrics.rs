//! Evaluation metrics: temporal IoU, mIoU, IoU@theta, and report formatting.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval::Interval;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// |a intersect b| / |a union b| in [0, 1]. A zero-length union counts 1 when
/// the degenerate intervals coincide, else 0.
pub fn temporal_iou(a: Interval, b: Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union > 0.0 {
        inter / union
    } else if a.start == b.start {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub miou: f64,
    /// theta (formatted with one decimal) -> fraction of queries with IoU
    /// strictly above theta.
    pub iou_at: BTreeMap<String, f64>,
    pub per_query_iou: Vec<f64>,
}

/// Per-query IoUs, their mean, and the strict IoU@theta fractions.
pub fn evaluate(preds: &[Interval], gts: &[Interval], thresholds: &[f64]) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::invalid("evaluate over zero queries"));
    }
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let per_query_iou: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(p, t)| temporal_iou(*p, *t))
        .collect();
    let miou = per_query_iou.iter().sum::<f64>() / per_query_iou.len() as f64;
    let mut iou_at = BTreeMap::new();
    for &theta in thresholds {
        let frac = per_query_iou.iter().filter(|&&v| v > theta).count() as f64
            / per_query_iou.len() as f64;
        iou_at.insert(format!("{theta:.1}"), frac);
    }
    Ok(EvalReport {
        miou,
        iou_at,
        per_query_iou,
    })
}

impl EvalReport {
    /// Plain-text table with the usual column layout.
    pub fn to_table(&self, label: &str) -> String {
        let mut s = String::new();
        s.push_str("Method       | mIoU  | IoU@0.3 | IoU@0.5 | IoU@0.7\n");
        s.push_str("-------------+-------+---------+---------+--------\n");
        let cell = |k: &str| {
            self.iou_at
                .get(k)
                .map_or("   -  ".to_string(), |v| format!("{:6.1}", v * 100.0))
        };
        s.push_str(&format!(
            "{:<12} | {:5.1} | {} | {} | {}\n",
            label,
            self.miou * 100.0,
            cell("0.3"),
            cell("0.5"),
            cell("0.7"),
        ));
        s
    }
}

/// Discretized counting oracle for interval overlap measures: counts bins
/// whose centers fall inside each region. Independent of the closed forms in
/// this module and in `objective`.
pub fn counting_oracle(a: Interval, b: Interval, span: f64, bins: usize) -> OracleCounts {
    let mut inter = 0usize;
    let mut union = 0usize;
    let mut enclose = 0usize;
    let lo = a.start.min(b.start);
    let hi = a.end.max(b.end);
    for k in 0..bins {
        let center = (k as f64 + 0.5) / bins as f64 * span;
        let in_a = center >= a.start && center <= a.end;
        let in_b = center >= b.start && center <= b.end;
        if in_a && in_b {
            inter += 1;
        }
        if in_a || in_b {
            union += 1;
        }
        if center >= lo && center <= hi {
            enclose += 1;
        }
    }
    OracleCounts {
        inter,
        union,
        enclose,
        bins,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleCounts {
    pub inter: usize,
    pub union: usize,
    pub enclose: usize,
    pub bins: usize,
}

impl OracleCounts {
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.inter as f64 / self.union as f64
        }
    }

    pub fn giou(&self) -> f64 {
        if self.enclose == 0 {
            return 1.0;
        }
        self.iou() - (self.enclose - self.union) as f64 / self.enclose as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(s: f64, e: f64) -> Interval {
        Interval::new(s, e).unwrap()
    }

    #[test]
    fn identical_intervals_iou_one() {
        assert_eq!(temporal_iou(iv(3.0, 9.0), iv(3.0, 9.0)), 1.0);
    }

    #[test]
    fn overlapping_hand_value() {
        let v = temporal_iou(iv(0.0, 10.0), iv(5.0, 15.0));
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(temporal_iou(iv(2.0, 2.0), iv(2.0, 2.0)), 1.0);
        assert_eq!(temporal_iou(iv(2.0, 2.0), iv(3.0, 3.0)), 0.0);
        assert_eq!(temporal_iou(iv(2.0, 2.0), iv(1.0, 5.0)), 0.0);
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let gts = vec![iv(0.0, 10.0), iv(20.0, 30.0)];
        let r = evaluate(&gts, &gts, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(r.miou, 1.0);
        for v in r.iou_at.values() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn evaluate_hand_values() {
        // per-query IoUs {0.2, 0.4, 0.9} -> mIoU 0.5, IoU@0.3 = 2/3
        let gts = vec![iv(0.0, 10.0), iv(0.0, 10.0), iv(0.0, 10.0)];
        let preds = vec![
            iv(0.0, 50.0),        // 10/50 = 0.2
            iv(0.0, 25.0),        // 10/25 = 0.4
            iv(0.0, 9.0),         // 9/10 = 0.9
        ];
        let r = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).unwrap();
        assert!((r.miou - 0.5).abs() < 1e-12);
        assert!((r.iou_at["0.3"] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.iou_at["0.5"] - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.iou_at["0.7"] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn strict_threshold() {
        // IoU exactly at theta does not count
        let r = evaluate(&[iv(0.0, 3.0)], &[iv(0.0, 10.0)], &[0.3]).unwrap();
        assert_eq!(r.iou_at["0.3"], 0.0);
    }

    #[test]
    fn duplicating_mean_pair_keeps_miou() {
        // per-query IoUs 0.4 and 0.6 -> mIoU 0.5; appending a pair with IoU
        // exactly 0.5 leaves the mean unchanged
        let gts = vec![iv(0.0, 10.0), iv(0.0, 10.0)];
        let preds = vec![iv(0.0, 4.0), iv(0.0, 6.0)];
        let r = evaluate(&preds, &gts, &[]).unwrap();
        assert!((r.miou - 0.5).abs() < 1e-12);
        let mut preds2 = preds.clone();
        let mut gts2 = gts.clone();
        preds2.push(iv(0.0, 5.0));
        gts2.push(iv(0.0, 10.0));
        let r2 = evaluate(&preds2, &gts2, &[]).unwrap();
        assert!((r.miou - r2.miou).abs() < 1e-12);
    }

    #[test]
    fn iou_at_non_increasing_in_theta() {
        let gts = vec![iv(0.0, 10.0), iv(5.0, 25.0), iv(40.0, 70.0)];
        let preds = vec![iv(1.0, 9.0), iv(6.0, 20.0), iv(45.0, 80.0)];
        let r = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).unwrap();
        assert!(r.iou_at["0.3"] >= r.iou_at["0.5"]);
        assert!(r.iou_at["0.5"] >= r.iou_at["0.7"]);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_scale_invariant(
            a0 in 0.0f64..100.0, a1 in 0.0f64..100.0,
            b0 in 0.0f64..100.0, b1 in 0.0f64..100.0,
            s in 0.01f64..50.0,
        ) {
            let a = iv(a0.min(a1), a0.max(a1));
            let b = iv(b0.min(b1), b0.max(b1));
            let scaled_a = iv(a.start * s, a.end * s);
            let scaled_b = iv(b.start * s, b.end * s);
            prop_assert!((temporal_iou(a, b) - temporal_iou(b, a)).abs() < 1e-12);
            prop_assert!((temporal_iou(a, b) - temporal_iou(scaled_a, scaled_b)).abs() < 1e-9);
        }
    }
}
