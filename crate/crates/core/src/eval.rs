//! COCO-style detection evaluation: greedy matching, 101-point interpolated
//! average precision, and mAP@[.5:.95].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, ScoredBox};

/// The ten COCO IoU thresholds 0.50, 0.55, ..., 0.95.
///
/// Generated as integer/20 so that a detection whose IoU is an exact decimal
/// (e.g. 0.6) compares equal to the corresponding threshold.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (10..20).map(|k| k as f64 / 20.0).collect()
}

/// Outcome of matching one image's detections against its ground truth at a
/// single IoU threshold.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Per detection, in descending score order: true for TP, false for FP.
    pub flags: Vec<bool>,
    /// Scores aligned with `flags`.
    pub scores: Vec<f64>,
    /// Ground-truth boxes left unmatched (false negatives).
    pub unmatched_gt: usize,
}

/// Greedy matcher: detections in descending score order each claim the
/// highest-IoU unmatched ground truth with IoU >= threshold (inclusive,
/// matching COCO); every ground truth is matched at most once.
pub fn match_detections(
    detections: &[ScoredBox],
    gts: &[BBox],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.partial_cmp(&detections[a].score).unwrap());

    let mut gt_taken = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(detections.len());
    let mut scores = Vec::with_capacity(detections.len());
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let v = iou(&det.bbox, gt);
            if v >= iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
        scores.push(det.score);
    }
    let unmatched_gt = gt_taken.iter().filter(|&&t| !t).count();
    MatchResult {
        flags,
        scores,
        unmatched_gt,
    }
}

/// 101-point interpolated average precision.
///
/// `flagged` holds (score, is_tp) pairs; they are sorted by descending score
/// internally. Conventions for `n_gt == 0`: AP is 0 when detections exist and
/// 1 when there are none (vacuously perfect).
pub fn average_precision(flagged: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flagged.is_empty() { 1.0 } else { 0.0 };
    }
    if flagged.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<(f64, bool)> = flagged.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall = Vec::with_capacity(sorted.len());
    let mut precision = Vec::with_capacity(sorted.len());
    for &(_, is_tp) in &sorted {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope: monotone non-increasing from the right
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    // sample at recall grid 0.00, 0.01, ..., 1.00
    let mut sum = 0.0;
    let mut idx = 0usize;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        if idx < recall.len() {
            sum += envelope[idx];
        }
    }
    sum / 101.0
}

/// One precision/recall curve sampled at the 101 recall grid points.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrCurve {
    pub iou_threshold: f64,
    /// Interpolated precision at recall 0.00, 0.01, ..., 1.00.
    pub precision: Vec<f64>,
}

/// TP/FP/FN counts at score cutoff 0.5 and IoU 0.5.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Full evaluation result; `map` is the mean of the ten per-threshold APs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub ap_per_threshold: Vec<(f64, f64)>,
    pub map: f64,
    pub pr_curves: Vec<PrCurve>,
    pub counts: DetectionCounts,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_detections: usize,
}

fn sampled_precision(flagged: &[(f64, bool)], n_gt: usize) -> Vec<f64> {
    if n_gt == 0 || flagged.is_empty() {
        return vec![0.0; 101];
    }
    let mut sorted: Vec<(f64, bool)> = flagged.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall = Vec::with_capacity(sorted.len());
    let mut precision = Vec::with_capacity(sorted.len());
    for &(_, is_tp) in &sorted {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut out = Vec::with_capacity(101);
    let mut idx = 0usize;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        out.push(if idx < recall.len() { envelope[idx] } else { 0.0 });
    }
    out
}

/// COCO-protocol mAP over a set of images.
///
/// Detections are matched per image at each IoU threshold, pooled across
/// images, and scored with 101-point AP; image id sets of the two maps must
/// be identical.
pub fn map_coco(
    detections: &BTreeMap<String, Vec<ScoredBox>>,
    gts: &BTreeMap<String, Vec<BBox>>,
) -> Result<EvalReport> {
    if detections.len() != gts.len() || detections.keys().ne(gts.keys()) {
        let only_det: Vec<&String> = detections.keys().filter(|k| !gts.contains_key(*k)).collect();
        let only_gt: Vec<&String> = gts.keys().filter(|k| !detections.contains_key(*k)).collect();
        return Err(Error::MismatchedIds(format!(
            "{} ids only in detections, {} only in ground truth",
            only_det.len(),
            only_gt.len()
        )));
    }

    let n_gt: usize = gts.values().map(|g| g.len()).sum();
    let n_detections: usize = detections.values().map(|d| d.len()).sum();

    let mut ap_per_threshold = Vec::new();
    let mut pr_curves = Vec::new();
    for thr in coco_iou_thresholds() {
        let mut pooled: Vec<(f64, bool)> = Vec::with_capacity(n_detections);
        for (id, dets) in detections {
            let m = match_detections(dets, &gts[id], thr);
            pooled.extend(m.scores.iter().copied().zip(m.flags.iter().copied()));
        }
        let ap = average_precision(&pooled, n_gt);
        ap_per_threshold.push((thr, ap));
        pr_curves.push(PrCurve {
            iou_threshold: thr,
            precision: sampled_precision(&pooled, n_gt),
        });
    }
    let map = ap_per_threshold.iter().map(|&(_, ap)| ap).sum::<f64>()
        / ap_per_threshold.len() as f64;

    // operating-point counts at score cutoff 0.5, IoU 0.5
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (id, dets) in detections {
        let confident: Vec<ScoredBox> = dets.iter().filter(|d| d.score >= 0.5).copied().collect();
        let m = match_detections(&confident, &gts[id], 0.5);
        tp += m.flags.iter().filter(|&&f| f).count();
        fp += m.flags.iter().filter(|&&f| !f).count();
        fn_ += m.unmatched_gt;
    }

    Ok(EvalReport {
        ap_per_threshold,
        map,
        pr_curves,
        counts: DetectionCounts { tp, fp, fn_ },
        n_images: gts.len(),
        n_gt,
        n_detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn sb(b: BBox, s: f64) -> ScoredBox {
        ScoredBox::new(b, s).unwrap()
    }

    #[test]
    fn match_identical_box_is_tp() {
        let gt = bb(0.0, 0.0, 10.0, 10.0);
        let m = match_detections(&[sb(gt, 0.9)], &[gt], 0.5);
        assert_eq!(m.flags, vec![true]);
        assert_eq!(m.unmatched_gt, 0);
    }

    #[test]
    fn match_single_gt_claims_once() {
        let gt = bb(0.0, 0.0, 10.0, 10.0);
        let dets = vec![sb(bb(0.5, 0.5, 10.5, 10.5), 0.7), sb(gt, 0.9)];
        let m = match_detections(&dets, &[gt], 0.5);
        // processed in score order: 0.9 first (TP), 0.7 second (FP)
        assert_eq!(m.scores, vec![0.9, 0.7]);
        assert_eq!(m.flags, vec![true, false]);
    }

    #[test]
    fn match_iou_exactly_at_threshold_is_tp() {
        // det covers 6/10 of gt: IoU = 60/100 = 0.6 exactly
        let gt = bb(0.0, 0.0, 10.0, 10.0);
        let det = sb(bb(0.0, 0.0, 6.0, 10.0), 0.9);
        let m = match_detections(&[det], &[gt], 0.6);
        assert_eq!(m.flags, vec![true]);
    }

    #[test]
    fn ap_perfect_detector_is_one() {
        let flagged = vec![(0.9, true), (0.8, true), (0.7, true)];
        assert_eq!(average_precision(&flagged, 3), 1.0);
    }

    #[test]
    fn ap_no_detections_is_zero() {
        assert_eq!(average_precision(&[], 4), 0.0);
    }

    #[test]
    fn ap_vacuous_conventions() {
        assert_eq!(average_precision(&[], 0), 1.0);
        assert_eq!(average_precision(&[(0.9, false)], 0), 0.0);
    }

    #[test]
    fn ap_one_tp_one_fp_of_two_gts() {
        // precision 1.0 holds through recall 0.5: grid points 0.00..=0.50,
        // i.e. 51 of the 101 samples.
        let flagged = vec![(0.9, true), (0.8, false)];
        let expected = 51.0 / 101.0;
        assert!((average_precision(&flagged, 2) - expected).abs() < 1e-12);
    }

    /// Exact area under the stepwise precision envelope, used as an
    /// independent check of the 101-point interpolation.
    fn ap_exact_envelope(flagged: &[(f64, bool)], n_gt: usize) -> f64 {
        if n_gt == 0 || flagged.is_empty() {
            return 0.0;
        }
        let mut sorted = flagged.to_vec();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut rec = vec![0.0];
        let mut prec = vec![0.0];
        for &(_, t) in &sorted {
            if t {
                tp += 1;
            } else {
                fp += 1;
            }
            rec.push(tp as f64 / n_gt as f64);
            prec.push(tp as f64 / (tp + fp) as f64);
        }
        let mut env = prec.clone();
        for i in (0..env.len() - 1).rev() {
            env[i] = env[i].max(env[i + 1]);
        }
        let mut area = 0.0;
        for i in 1..rec.len() {
            area += (rec[i] - rec[i - 1]) * env[i];
        }
        area
    }

    #[test]
    fn ap_interpolation_close_to_exact_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let n_gt = rng.gen_range(1..20usize);
            let flagged: Vec<(f64, bool)> = (0..n)
                .map(|_| (rng.gen_range(0.0..1.0), rng.gen_bool(0.5)))
                .collect();
            let n_tp = flagged.iter().filter(|f| f.1).count();
            if n_tp > n_gt {
                continue;
            }
            let a = average_precision(&flagged, n_gt);
            let b = ap_exact_envelope(&flagged, n_gt);
            assert!(
                (a - b).abs() <= 0.01,
                "interpolated {a} vs exact {b} for {flagged:?} n_gt={n_gt}"
            );
        }
    }

    fn one_image(
        dets: Vec<ScoredBox>,
        gts: Vec<BBox>,
    ) -> (BTreeMap<String, Vec<ScoredBox>>, BTreeMap<String, Vec<BBox>>) {
        let mut d = BTreeMap::new();
        let mut g = BTreeMap::new();
        d.insert("img0".to_string(), dets);
        g.insert("img0".to_string(), gts);
        (d, g)
    }

    #[test]
    fn map_perfect_detections() {
        let gt = vec![bb(0.0, 0.0, 10.0, 10.0), bb(30.0, 30.0, 50.0, 45.0)];
        let dets = gt.iter().map(|b| sb(*b, 1.0)).collect();
        let (d, g) = one_image(dets, gt);
        let report = map_coco(&d, &g).unwrap();
        assert_eq!(report.map, 1.0);
        assert_eq!(report.counts, DetectionCounts { tp: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn map_single_detection_iou_060() {
        // IoU exactly 0.6: matched at thresholds 0.50, 0.55, 0.60 only
        let gt = vec![bb(0.0, 0.0, 10.0, 10.0)];
        let dets = vec![sb(bb(0.0, 0.0, 6.0, 10.0), 0.9)];
        let (d, g) = one_image(dets, gt);
        let report = map_coco(&d, &g).unwrap();
        for (thr, ap) in &report.ap_per_threshold {
            let expected = if *thr <= 0.6 { 1.0 } else { 0.0 };
            assert_eq!(*ap, expected, "threshold {thr}");
        }
        assert!((report.map - 0.3).abs() < 1e-12);
    }

    #[test]
    fn map_score_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut d = BTreeMap::new();
        let mut g = BTreeMap::new();
        for i in 0..4 {
            let id = format!("img{i}");
            let gts: Vec<BBox> = (0..3)
                .map(|_| {
                    let x = rng.gen_range(0.0..80.0);
                    let y = rng.gen_range(0.0..80.0);
                    bb(x, y, x + rng.gen_range(5.0..20.0), y + rng.gen_range(5.0..20.0))
                })
                .collect();
            let dets: Vec<ScoredBox> = gts
                .iter()
                .map(|b| {
                    let shift = rng.gen_range(-3.0..3.0);
                    sb(
                        bb(b.x_min + shift, b.y_min, b.x_max + shift, b.y_max),
                        rng.gen_range(0.1..0.6),
                    )
                })
                .collect();
            d.insert(id.clone(), dets);
            g.insert(id, gts);
        }
        let base = map_coco(&d, &g).unwrap();
        // strictly monotone transform of every score
        let mut shifted = d.clone();
        for dets in shifted.values_mut() {
            for det in dets.iter_mut() {
                det.score = 0.4 + det.score / 2.0;
            }
        }
        let transformed = map_coco(&shifted, &g).unwrap();
        assert_eq!(base.ap_per_threshold, transformed.ap_per_threshold);
        assert_eq!(base.map, transformed.map);
    }

    #[test]
    fn map_mismatched_ids_error() {
        let mut d = BTreeMap::new();
        let mut g = BTreeMap::new();
        d.insert("a".to_string(), vec![]);
        g.insert("b".to_string(), vec![]);
        assert!(matches!(map_coco(&d, &g), Err(Error::MismatchedIds(_))));
    }

    proptest! {
        #[test]
        fn adding_lowest_score_fp_never_increases_ap(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..15);
            let n_gt = rng.gen_range(1..15usize);
            let mut flagged: Vec<(f64, bool)> = (0..n)
                .map(|_| (rng.gen_range(0.1..1.0), rng.gen_bool(0.6)))
                .collect();
            let n_tp = flagged.iter().filter(|f| f.1).count();
            prop_assume!(n_tp <= n_gt);
            let base = average_precision(&flagged, n_gt);
            flagged.push((0.05, false));
            let with_fp = average_precision(&flagged, n_gt);
            prop_assert!(with_fp <= base + 1e-12);
        }

        #[test]
        fn tp_count_bounded(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_det = rng.gen_range(0..10);
            let n_gt = rng.gen_range(0..10);
            let dets: Vec<ScoredBox> = (0..n_det).map(|_| {
                let x = rng.gen_range(0.0..50.0);
                let y = rng.gen_range(0.0..50.0);
                sb(bb(x, y, x + 10.0, y + 10.0), rng.gen_range(0.0..1.0))
            }).collect();
            let gts: Vec<BBox> = (0..n_gt).map(|_| {
                let x = rng.gen_range(0.0..50.0);
                let y = rng.gen_range(0.0..50.0);
                bb(x, y, x + 10.0, y + 10.0)
            }).collect();
            let m = match_detections(&dets, &gts, 0.5);
            let tps = m.flags.iter().filter(|&&f| f).count();
            prop_assert!(tps <= n_det.min(n_gt));
            prop_assert_eq!(m.unmatched_gt, n_gt - tps);
        }
    }
}
