//! Box detection metrics: COCO-style mAP over ten IoU thresholds with
//! all-point interpolation, and precision/recall/F1 at IoU 0.5 with an
//! optional F1-maximizing confidence sweep.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, iou};

/// `0.50, 0.55, ..., 0.95`, each computed as an exact decimal quotient.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

pub const PR_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalDetection {
    pub image: usize,
    pub class: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: usize,
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    /// Mean over the ten IoU thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ground_truth: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub map50: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Confidence cut used for precision/recall; `None` keeps everything.
    pub threshold: Option<f64>,
    pub counts: Counts,
    /// Classes with ground truth, ascending.
    pub per_class: Vec<ClassAp>,
    /// Degenerate-input conventions that were applied.
    pub flags: Vec<String>,
}

/// Detection indices by descending confidence; ties keep input order.
fn confidence_rank(dets: &[EvalDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy matching in `order`: each detection takes the unmatched
/// ground truth of its image and class with the highest IoU at or above
/// `threshold`, ties to the lower index. Returns the TP flag per position.
fn greedy_match(dets: &[EvalDetection], order: &[usize], gts: &[GroundTruth], threshold: f64) -> Vec<bool> {
    let mut by_key: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        by_key.entry((gt.image, gt.class)).or_default().push(g);
    }
    let mut used = vec![false; gts.len()];
    order
        .iter()
        .map(|&d| {
            let det = &dets[d];
            let mut best: Option<(usize, f64)> = None;
            for &g in by_key.get(&(det.image, det.class)).map(Vec::as_slice).unwrap_or(&[]) {
                if used[g] {
                    continue;
                }
                let o = iou(&det.bbox, &gts[g].bbox);
                if o >= threshold && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated AP from TP flags in confidence order.
fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.into_iter().zip(precision) {
        if r > prev {
            ap += (r - prev) * p;
            prev = r;
        }
    }
    ap
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }
}

pub fn compute_metrics(dets: &[EvalDetection], gts: &[GroundTruth], sweep: bool) -> MetricsReport {
    let mut flags = Vec::new();
    let mut classes: Vec<usize> = gts.iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();

    let thresholds = iou_thresholds();
    let mut per_class = Vec::with_capacity(classes.len());
    for &c in &classes {
        let cdets: Vec<EvalDetection> = dets.iter().filter(|d| d.class == c).copied().collect();
        let cgts: Vec<GroundTruth> = gts.iter().filter(|g| g.class == c).copied().collect();
        let order = confidence_rank(&cdets);
        let mut sum = 0.0;
        let mut ap50 = 0.0;
        for (k, &t) in thresholds.iter().enumerate() {
            let ap = average_precision(&greedy_match(&cdets, &order, &cgts, t), cgts.len());
            if k == 0 {
                ap50 = ap;
            }
            sum += ap;
        }
        per_class.push(ClassAp {
            class: c,
            ap: sum / thresholds.len() as f64,
            ap50,
            ground_truth: cgts.len(),
            detections: cdets.len(),
        });
    }
    let (map, map50) = if per_class.is_empty() {
        flags.push("no ground truth: mAP reported as 0".to_string());
        (0.0, 0.0)
    } else {
        let n = per_class.len() as f64;
        (
            per_class.iter().map(|c| c.ap).sum::<f64>() / n,
            per_class.iter().map(|c| c.ap50).sum::<f64>() / n,
        )
    };

    let order = confidence_rank(dets);
    let tp = greedy_match(dets, &order, gts, PR_IOU);
    let at_cut = |n: usize| -> (Counts, f64, f64) {
        let hits = tp[..n].iter().filter(|&&t| t).count();
        let counts = Counts {
            tp: hits,
            fp: n - hits,
            fn_: gts.len() - hits,
        };
        let p = if n > 0 { hits as f64 / n as f64 } else { 0.0 };
        let r = if gts.is_empty() { 0.0 } else { hits as f64 / gts.len() as f64 };
        (counts, p, r)
    };
    let (mut cut, mut threshold) = (order.len(), None);
    if sweep && !order.is_empty() {
        // Candidate cuts end after the last detection of each distinct confidence.
        let mut best_f1 = f64::NEG_INFINITY;
        for n in 1..=order.len() {
            let conf = dets[order[n - 1]].confidence;
            if n < order.len() && dets[order[n]].confidence == conf {
                continue;
            }
            let (_, p, r) = at_cut(n);
            let score = f1(p, r);
            // >= keeps the lowest threshold among equal scores.
            if score >= best_f1 {
                best_f1 = score;
                cut = n;
                threshold = Some(conf);
            }
        }
    }
    let (counts, precision, recall) = at_cut(cut);
    if gts.is_empty() {
        flags.push("no ground truth: recall reported as 0".to_string());
    }
    if cut == 0 {
        flags.push("no detections: precision reported as 0".to_string());
    }
    MetricsReport {
        map,
        map50,
        precision,
        recall,
        f1: f1(precision, recall),
        threshold,
        counts,
        per_class,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::from_xywh(x, y, w, h)
    }

    fn det(image: usize, class: usize, bbox: BBox, confidence: f64) -> EvalDetection {
        EvalDetection {
            image,
            class,
            bbox,
            confidence,
        }
    }

    fn gt(image: usize, class: usize, bbox: BBox) -> GroundTruth {
        GroundTruth { image, class, bbox }
    }

    #[test]
    fn thresholds_are_decimal() {
        let t = iou_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[1], 0.55);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn perfect_detections() {
        let g = vec![gt(0, 0, b(0.0, 0.0, 10.0, 10.0)), gt(1, 1, b(5.0, 5.0, 4.0, 8.0))];
        let d: Vec<_> = g.iter().map(|g| det(g.image, g.class, g.bbox, 0.9)).collect();
        let m = compute_metrics(&d, &g, true);
        assert_eq!((m.map, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let g = vec![gt(0, 0, b(0.0, 0.0, 10.0, 10.0))];
        let d = vec![det(0, 0, b(0.0, 0.0, 10.0, 10.0), 0.9), det(0, 0, b(0.0, 0.0, 10.0, 10.0), 0.8)];
        let m = compute_metrics(&d, &g, false);
        assert_eq!(m.counts, Counts { tp: 1, fp: 1, fn_: 0 });
        assert_eq!((m.precision, m.recall), (0.5, 1.0));
        // The duplicate comes after full recall, so AP stays 1.
        assert_eq!(m.map, 1.0);
    }

    #[test]
    fn hand_computed_ap() {
        // TP, FP, TP over 3 GT: precision points 1, 1/2, 2/3 at recalls 1/3, 1/3, 2/3.
        let g = vec![
            gt(0, 0, b(0.0, 0.0, 10.0, 10.0)),
            gt(0, 0, b(20.0, 0.0, 10.0, 10.0)),
            gt(1, 0, b(0.0, 0.0, 10.0, 10.0)),
        ];
        let d = vec![
            det(0, 0, b(0.0, 0.0, 10.0, 10.0), 0.9),
            det(0, 0, b(50.0, 50.0, 10.0, 10.0), 0.8),
            det(0, 0, b(20.0, 0.0, 10.0, 10.0), 0.7),
        ];
        let m = compute_metrics(&d, &g, false);
        let expected = 1.0 / 3.0 * 1.0 + (2.0 / 3.0 - 1.0 / 3.0) * (2.0 / 3.0);
        assert!((m.map50 - expected).abs() < 1e-15);
    }

    #[test]
    fn sweep_picks_best_cut() {
        let g = vec![gt(0, 0, b(0.0, 0.0, 10.0, 10.0))];
        let d = vec![det(0, 0, b(0.0, 0.0, 10.0, 10.0), 0.9), det(0, 0, b(40.0, 40.0, 5.0, 5.0), 0.3)];
        let m = compute_metrics(&d, &g, true);
        assert_eq!(m.threshold, Some(0.9));
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn empty_inputs_are_flagged() {
        let m = compute_metrics(&[], &[], true);
        assert_eq!((m.map, m.precision, m.recall, m.f1), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.flags.len(), 3);
    }

    #[test]
    fn f1_identity() {
        let g = vec![gt(0, 0, b(0.0, 0.0, 10.0, 10.0)), gt(0, 0, b(30.0, 0.0, 10.0, 10.0))];
        let d = vec![det(0, 0, b(0.0, 0.0, 10.0, 10.0), 0.9), det(0, 0, b(60.0, 0.0, 5.0, 5.0), 0.5)];
        let m = compute_metrics(&d, &g, false);
        let (p, r) = (m.precision, m.recall);
        assert_eq!(m.f1, 2.0 * p * r / (p + r));
    }
}
