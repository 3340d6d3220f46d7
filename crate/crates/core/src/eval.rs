//! Detection-quality metrics: IoU matching, precision/recall, and average
//! precision with the all-points monotone-envelope interpolation.
//!
//! Matching is greedy and one-to-one: predictions in descending score order
//! each claim the unmatched same-class ground truth with the highest IoU at
//! or above the threshold (ties: lower ground-truth index). Score ties are
//! ordered deterministically by the shared detection ranking, so results do
//! not depend on input order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("degenerate box (w={w}, h={h}); areas must be positive")]
    DegenerateBox { w: f64, h: f64 },
}

/// Intersection over union, erroring on boxes without positive area.
pub fn iou(a: &Detection, b: &Detection) -> Result<f64, EvalError> {
    for d in [a, b] {
        if !(d.w > 0.0 && d.h > 0.0) {
            return Err(EvalError::DegenerateBox { w: d.w, h: d.h });
        }
    }
    Ok(a.iou(b))
}

/// Outcome of matching one prediction set against one ground-truth set.
/// Indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (prediction index, matched ground-truth index), in match order.
    pub true_positives: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub iou_threshold: f64,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.true_positives.len()
    }
    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }
    pub fn fn_(&self) -> usize {
        self.false_negatives.len()
    }
}

/// Indices of `preds` in deterministic rank order (descending score, ties by
/// larger area, lower x, lower y).
fn ranked_indices(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].rank_cmp(&preds[b]));
    order
}

/// Greedy one-to-one matching at an IoU threshold.
pub fn match_detections(
    preds: &[Detection],
    gts: &[Detection],
    iou_threshold: f64,
) -> MatchResult {
    let mut gt_taken = vec![false; gts.len()];
    let mut true_positives = Vec::new();
    let mut false_positives = Vec::new();
    for pi in ranked_indices(preds) {
        let pred = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] || gt.class_id != pred.class_id {
                continue;
            }
            let overlap = pred.iou(gt);
            if overlap < iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                // Strictly-greater keeps the lower index on ties.
                Some((_, best_iou)) => overlap > best_iou,
            };
            if better {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                true_positives.push((pi, gi));
            }
            None => false_positives.push(pi),
        }
    }
    let false_negatives = gt_taken
        .iter()
        .enumerate()
        .filter_map(|(gi, &taken)| (!taken).then_some(gi))
        .collect();
    MatchResult { true_positives, false_positives, false_negatives, iou_threshold }
}

/// (precision, recall) with the empty-denominator conventions P = 1 when
/// there are no predictions and R = 1 when there is no ground truth.
pub fn precision_recall(m: &MatchResult) -> (f64, f64) {
    let tp = m.tp() as f64;
    let precision = if m.tp() + m.fp() == 0 { 1.0 } else { tp / (m.tp() + m.fp()) as f64 };
    let recall = if m.tp() + m.fn_() == 0 { 1.0 } else { tp / (m.tp() + m.fn_()) as f64 };
    (precision, recall)
}

/// PR points by descending score threshold, one per distinct prediction
/// score; recall is non-decreasing along the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    /// (recall, precision) pairs.
    pub points: Vec<(f64, f64)>,
}

/// Builds the PR curve by sweeping the score threshold over every distinct
/// prediction score (descending). Matching the full ranked list once gives
/// the same per-threshold results because greedy matching is prefix-stable:
/// predictions never influence the matches of higher-ranked ones.
pub fn pr_curve(preds: &[Detection], gts: &[Detection], iou_threshold: f64) -> PRCurve {
    if gts.is_empty() {
        return PRCurve { points: Vec::new() };
    }
    let order = ranked_indices(preds);
    let full = match_detections(preds, gts, iou_threshold);
    let is_tp: Vec<bool> = {
        let mut v = vec![false; preds.len()];
        for &(pi, _) in &full.true_positives {
            v[pi] = true;
        }
        v
    };
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (rank, &pi) in order.iter().enumerate() {
        if is_tp[pi] {
            tp += 1;
        }
        let next_same_score = order
            .get(rank + 1)
            .is_some_and(|&ni| preds[ni].score == preds[pi].score);
        if next_same_score {
            continue;
        }
        let recall = tp as f64 / gts.len() as f64;
        let precision = tp as f64 / (rank + 1) as f64;
        points.push((recall, precision));
    }
    PRCurve { points }
}

/// Area under the monotone-envelope PR curve (all-points interpolation).
/// Without ground truth the value is vacuous: 1 when there are also no
/// predictions, else 0.
pub fn average_precision(preds: &[Detection], gts: &[Detection], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(preds, gts, iou_threshold);
    let mut envelope: Vec<f64> = curve.points.iter().map(|&(_, p)| p).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(recall, _), &env_p) in curve.points.iter().zip(&envelope) {
        ap += (recall - prev_recall) * env_p;
        prev_recall = recall;
    }
    ap
}

/// Recall within one ground-truth size bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRecall {
    pub ground_truths: usize,
    pub matched: usize,
    /// Absent when the bucket holds no ground truths.
    pub recall: Option<f64>,
}

/// The full structured report emitted by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub predictions: usize,
    pub ground_truths: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub average_precision: f64,
    /// (recall, precision) points by descending score threshold.
    pub pr_curve: Vec<(f64, f64)>,
    /// Ground-truth area < 32² px.
    pub small: SizeRecall,
    /// 32² px ≤ area < 96² px.
    pub medium: SizeRecall,
    /// Area ≥ 96² px.
    pub large: SizeRecall,
}

const SMALL_AREA_PX: f64 = 32.0 * 32.0;
const LARGE_AREA_PX: f64 = 96.0 * 96.0;

fn bucket_of(area: f64) -> usize {
    if area < SMALL_AREA_PX {
        0
    } else if area < LARGE_AREA_PX {
        1
    } else {
        2
    }
}

/// One-call evaluation: matching, P/R, AP, curve, and size-bucket recall.
pub fn evaluate(preds: &[Detection], gts: &[Detection], iou_threshold: f64) -> EvalReport {
    let m = match_detections(preds, gts, iou_threshold);
    let (precision, recall) = precision_recall(&m);
    let mut counts = [0usize; 3];
    let mut matched = [0usize; 3];
    for (gi, gt) in gts.iter().enumerate() {
        counts[bucket_of(gt.area())] += 1;
        if m.true_positives.iter().any(|&(_, mg)| mg == gi) {
            matched[bucket_of(gt.area())] += 1;
        }
    }
    let size = |b: usize| SizeRecall {
        ground_truths: counts[b],
        matched: matched[b],
        recall: (counts[b] > 0).then(|| matched[b] as f64 / counts[b] as f64),
    };
    EvalReport {
        iou_threshold,
        predictions: preds.len(),
        ground_truths: gts.len(),
        true_positives: m.tp(),
        false_positives: m.fp(),
        false_negatives: m.fn_(),
        precision,
        recall,
        average_precision: average_precision(preds, gts, iou_threshold),
        pr_curve: pr_curve(preds, gts, iou_threshold).points,
        small: size(0),
        medium: size(1),
        large: size(2),
    }
}
