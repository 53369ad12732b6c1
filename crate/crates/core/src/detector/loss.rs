//! Target assignment and the classification / regression losses.

use ndarray::{Array1, Array2, ArrayView3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{iou, nms, BBox, ScoredBox};

use super::anchors::{decode_box, encode_box, AnchorGrid};
use super::net::{sigmoid, DetectorOutput, DetectorParams};

/// Per-anchor assignment outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
    Ignore,
}

/// Assignment of every anchor against one image's ground truth.
#[derive(Debug, Clone)]
pub struct TargetAssignment {
    pub labels: Vec<AnchorLabel>,
    pub gts: Vec<BBox>,
}

impl TargetAssignment {
    pub fn n_positive(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, AnchorLabel::Positive(_)))
            .count()
    }

    pub fn n_negative(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, AnchorLabel::Negative))
            .count()
    }
}

/// Band assignment with a best-match guarantee.
///
/// An anchor is positive when its best IoU reaches `pos_iou` (matched to the
/// arg-max ground truth), negative below `neg_iou`, ignored in between. Each
/// ground truth additionally forces its best-overlapping free anchor
/// positive so no box goes unmatched.
pub fn assign_targets(
    grid: &AnchorGrid,
    gts: &[BBox],
    pos_iou: f64,
    neg_iou: f64,
) -> TargetAssignment {
    let n = grid.len();
    if gts.is_empty() {
        return TargetAssignment {
            labels: vec![AnchorLabel::Negative; n],
            gts: vec![],
        };
    }
    let mut labels = Vec::with_capacity(n);
    for anchor in &grid.anchors {
        let mut best = 0.0f64;
        let mut best_gt = 0usize;
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(anchor, gt);
            if v > best {
                best = v;
                best_gt = gi;
            }
        }
        labels.push(if best >= pos_iou {
            AnchorLabel::Positive(best_gt)
        } else if best < neg_iou {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        });
    }
    // best-match rule: every gt claims its highest-IoU anchor, skipping
    // anchors already forced by an earlier gt
    let mut forced = vec![false; n];
    for (gi, gt) in gts.iter().enumerate() {
        let mut best = 0.0f64;
        let mut best_anchor: Option<usize> = None;
        for (ai, anchor) in grid.anchors.iter().enumerate() {
            if forced[ai] {
                continue;
            }
            let v = iou(anchor, gt);
            if v > best {
                best = v;
                best_anchor = Some(ai);
            }
        }
        if let Some(ai) = best_anchor {
            labels[ai] = AnchorLabel::Positive(gi);
            forced[ai] = true;
        }
    }
    TargetAssignment {
        labels,
        gts: gts.to_vec(),
    }
}

/// Exclude anchors that overlap an uncertain pseudo-label from the loss:
/// any non-positive anchor with IoU >= `neg_iou` against an uncertain box
/// becomes ignore.
pub fn apply_uncertain_ignore(
    assignment: &mut TargetAssignment,
    grid: &AnchorGrid,
    uncertain: &[BBox],
    neg_iou: f64,
) {
    if uncertain.is_empty() {
        return;
    }
    for (ai, label) in assignment.labels.iter_mut().enumerate() {
        if matches!(label, AnchorLabel::Positive(_)) {
            continue;
        }
        let anchor = &grid.anchors[ai];
        if uncertain.iter().any(|u| iou(anchor, u) >= neg_iou) {
            *label = AnchorLabel::Ignore;
        }
    }
}

/// Numerically stable binary cross entropy with logits.
fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn smooth_l1(e: f64) -> f64 {
    if e.abs() < 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

fn smooth_l1_grad(e: f64) -> f64 {
    if e.abs() < 1.0 {
        e
    } else {
        e.signum()
    }
}

fn cls_loss_impl(
    output: &DetectorOutput,
    assignment: &TargetAssignment,
    weights: Option<&[f64]>,
    want_grad: bool,
) -> (f64, Vec<f64>, Option<Array1<f64>>) {
    let n = output.score_logits.len();
    let mut per_anchor = vec![0.0f64; n];
    let mut weight_sum = 0.0f64;
    let mut weighted_loss = 0.0f64;
    for i in 0..n {
        let y = match assignment.labels[i] {
            AnchorLabel::Positive(_) => 1.0,
            AnchorLabel::Negative => 0.0,
            AnchorLabel::Ignore => continue,
        };
        let l = bce_with_logits(output.score_logits[i], y);
        per_anchor[i] = l;
        let w = weights.map_or(1.0, |ws| ws[i]);
        weight_sum += w;
        weighted_loss += w * l;
    }
    let loss = if weight_sum > 0.0 {
        weighted_loss / weight_sum
    } else {
        0.0
    };
    let grad = want_grad.then(|| {
        let mut d = Array1::<f64>::zeros(n);
        if weight_sum > 0.0 {
            for i in 0..n {
                let y = match assignment.labels[i] {
                    AnchorLabel::Positive(_) => 1.0,
                    AnchorLabel::Negative => 0.0,
                    AnchorLabel::Ignore => continue,
                };
                let w = weights.map_or(1.0, |ws| ws[i]);
                d[i] = w * (sigmoid(output.score_logits[i]) - y) / weight_sum;
            }
        }
        d
    });
    (loss, per_anchor, grad)
}

/// Mean binary cross entropy over positive and negative anchors, with the
/// per-anchor loss vector exposed for reliability weighting. Optional
/// weights turn the mean into a weighted mean (weight 1 everywhere
/// reproduces the plain mean).
pub fn classification_loss(
    output: &DetectorOutput,
    assignment: &TargetAssignment,
    weights: Option<&[f64]>,
) -> (f64, Vec<f64>) {
    let (loss, per_anchor, _) = cls_loss_impl(output, assignment, weights, false);
    (loss, per_anchor)
}

fn reg_loss_impl(
    output: &DetectorOutput,
    assignment: &TargetAssignment,
    grid: &AnchorGrid,
    want_grad: bool,
) -> (f64, Option<Array2<f64>>) {
    let n_pos = assignment.n_positive();
    if n_pos == 0 {
        return (
            0.0,
            want_grad.then(|| Array2::zeros(output.box_deltas.raw_dim())),
        );
    }
    let mut total = 0.0f64;
    let mut grad = want_grad.then(|| Array2::<f64>::zeros(output.box_deltas.raw_dim()));
    for (ai, label) in assignment.labels.iter().enumerate() {
        let AnchorLabel::Positive(gi) = label else {
            continue;
        };
        let target = encode_box(&assignment.gts[*gi], &grid.anchors[ai]);
        for c in 0..4 {
            let e = output.box_deltas[[ai, c]] - target[c];
            total += smooth_l1(e);
            if let Some(g) = grad.as_mut() {
                g[[ai, c]] = smooth_l1_grad(e) / n_pos as f64;
            }
        }
    }
    (total / n_pos as f64, grad)
}

/// Smooth-L1 between predicted deltas and encoded targets, averaged over
/// positive anchors; zero when there are none.
pub fn regression_loss(
    output: &DetectorOutput,
    assignment: &TargetAssignment,
    grid: &AnchorGrid,
) -> f64 {
    reg_loss_impl(output, assignment, grid, false).0
}

/// Sigmoid scores, delta decoding against the anchors, clipping, score
/// filter, then NMS.
pub fn decode(
    output: &DetectorOutput,
    grid: &AnchorGrid,
    score_threshold: f64,
    nms_iou: f64,
) -> Vec<ScoredBox> {
    let mut candidates = Vec::new();
    for (ai, anchor) in grid.anchors.iter().enumerate() {
        let score = sigmoid(output.score_logits[ai]);
        if score < score_threshold {
            continue;
        }
        let deltas = [
            output.box_deltas[[ai, 0]],
            output.box_deltas[[ai, 1]],
            output.box_deltas[[ai, 2]],
            output.box_deltas[[ai, 3]],
        ];
        if let Some(bbox) = decode_box(&deltas, anchor, grid.image_size as f64) {
            candidates.push(ScoredBox { bbox, score });
        }
    }
    nms(&candidates, nms_iou, score_threshold)
}

/// Classification + regression for one image.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageLossTerms {
    pub cls: f64,
    pub reg: f64,
}

impl ImageLossTerms {
    pub fn total(&self) -> f64 {
        self.cls + self.reg
    }
}

/// One labeled (or pseudo-labeled) training example.
#[derive(Clone, Copy)]
pub struct LabeledExample<'a> {
    pub pixels: ArrayView3<'a, f64>,
    pub boxes: &'a [BBox],
}

/// Loss terms for one image without gradients.
pub fn image_loss(
    params: &DetectorParams,
    grid: &AnchorGrid,
    example: &LabeledExample<'_>,
) -> Result<ImageLossTerms> {
    let output = params.forward(&example.pixels)?;
    let assignment = assign_targets(grid, example.boxes, params.config.pos_iou, params.config.neg_iou);
    let (cls, _) = classification_loss(&output, &assignment, None);
    let reg = regression_loss(&output, &assignment, grid);
    Ok(ImageLossTerms { cls, reg })
}

/// Options modifying the per-image loss for the unsupervised branch.
#[derive(Default)]
pub struct LossModifiers<'a> {
    /// Per-anchor classification weights (reliability weighting).
    pub weights: Option<&'a [f64]>,
    /// Boxes whose overlapping anchors are excluded from the loss.
    pub uncertain: Option<&'a [BBox]>,
}

/// Loss terms plus the flat trainable-parameter gradient for one image.
pub fn image_loss_grad(
    params: &DetectorParams,
    grid: &AnchorGrid,
    example: &LabeledExample<'_>,
    modifiers: &LossModifiers<'_>,
) -> Result<(ImageLossTerms, Vec<f64>)> {
    let (output, cache) = params.forward_cached(&example.pixels)?;
    let mut assignment = assign_targets(
        grid,
        example.boxes,
        params.config.pos_iou,
        params.config.neg_iou,
    );
    if let Some(uncertain) = modifiers.uncertain {
        apply_uncertain_ignore(&mut assignment, grid, uncertain, params.config.neg_iou);
    }
    let (cls, _, d_logits) = cls_loss_impl(&output, &assignment, modifiers.weights, true);
    let (reg, d_deltas) = reg_loss_impl(&output, &assignment, grid, true);
    let grads = params.backward(&cache, &d_logits.unwrap(), &d_deltas.unwrap());
    Ok((ImageLossTerms { cls, reg }, grads))
}

/// Batch loss with component breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
}

fn mean_terms(terms: &[ImageLossTerms]) -> LossValue {
    let n = terms.len() as f64;
    let cls = terms.iter().map(|t| t.cls).sum::<f64>() / n;
    let reg = terms.iter().map(|t| t.reg).sum::<f64>() / n;
    LossValue {
        total: cls + reg,
        cls,
        reg,
    }
}

/// Eq.-style supervised loss: per-image classification + regression, averaged
/// over the batch.
pub fn supervised_loss(
    params: &DetectorParams,
    grid: &AnchorGrid,
    batch: &[LabeledExample<'_>],
) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let terms = batch
        .par_iter()
        .map(|ex| image_loss(params, grid, ex))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_terms(&terms))
}

/// Supervised loss plus the batch-mean gradient. Gradient entries are
/// checked finite before being returned.
pub fn supervised_loss_and_grad(
    params: &DetectorParams,
    grid: &AnchorGrid,
    batch: &[LabeledExample<'_>],
) -> Result<(LossValue, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let results = batch
        .par_iter()
        .map(|ex| image_loss_grad(params, grid, ex, &LossModifiers::default()))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::with_capacity(results.len());
    let mut grads = vec![0.0f64; params.n_trainable()];
    let scale = 1.0 / results.len() as f64;
    for (t, g) in &results {
        terms.push(*t);
        for (acc, v) in grads.iter_mut().zip(g.iter()) {
            *acc += scale * v;
        }
    }
    if grads.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((mean_terms(&terms), grads))
}
