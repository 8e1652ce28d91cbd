use super::{BBox, ScoredDetection};

/// NMS suppression threshold used throughout the pipeline.
pub const DEFAULT_NMS_IOU: f64 = 0.1;

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Greedy class-wise non-maximum suppression.
///
/// Detections are visited in descending score order (ties broken by input
/// index); one is kept iff its IoU with every already-kept detection of
/// the same class is <= `iou_threshold`. Returned detections keep the
/// visiting order, so the output is score-sorted within each class.
pub fn nms(dets: &[ScoredDetection], iou_threshold: f64) -> Vec<ScoredDetection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable sort keeps input order on equal scores
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());

    let mut kept: Vec<usize> = Vec::new();
    'cand: for &i in &order {
        for &k in &kept {
            if dets[k].class_id == dets[i].class_id && iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold {
                continue 'cand;
            }
        }
        kept.push(i);
    }
    kept.into_iter().map(|i| dets[i]).collect()
}
