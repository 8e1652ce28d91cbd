use std::collections::BTreeMap;
use std::io::{self, Write};

use super::nms::iou;
use super::{BBox, EvalSample};

/// IoU thresholds (in percent) averaged for the ranged metric: 0.50:0.05:0.95.
pub const MAP_RANGE_THRESHOLDS: [u32; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

const FIXED_THRESHOLDS: [u32; 3] = [30, 50, 70];

/// Average precision for a single class at one IoU threshold.
///
/// `preds` are `(image_id, score, box)`, `gts` are `(image_id, box)`.
/// Matching is greedy in descending score order (ties by input index):
/// each prediction takes the unmatched same-image ground truth of highest
/// IoU and counts as a true positive iff that IoU >= `iou_threshold`.
/// AP is the area under the all-point interpolated precision-recall
/// curve.
///
/// Returns `None` when there are neither predictions nor ground truths
/// (the class is then excluded from class means); `Some(0.0)` when
/// predictions exist but no ground truth does.
pub fn average_precision(
    preds: &[(usize, f64, BBox)],
    gts: &[(usize, BBox)],
    iou_threshold: f64,
) -> Option<f64> {
    if preds.is_empty() && gts.is_empty() {
        return None;
    }
    if gts.is_empty() {
        return Some(0.0);
    }
    if preds.is_empty() {
        return Some(0.0);
    }

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.partial_cmp(&preds[a].1).unwrap());

    let mut gt_matched = vec![false; gts.len()];
    // true-positive flags in score order
    let mut tp_flags = Vec::with_capacity(preds.len());
    for &pi in &order {
        let (img, _, pbox) = preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, &(gimg, gbox)) in gts.iter().enumerate() {
            if gimg != img || gt_matched[gi] {
                continue;
            }
            let ov = iou(&pbox, &gbox);
            if best.map_or(true, |(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        match best {
            Some((gi, ov)) if ov >= iou_threshold => {
                gt_matched[gi] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }

    let n_gt = gts.len() as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut precisions = Vec::with_capacity(tp_flags.len());
    for &is_tp in &tp_flags {
        if is_tp {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recalls.push(tp / n_gt);
        precisions.push(tp / (tp + fp));
    }

    // interpolate: precision at recall r becomes max precision at recall >= r
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        if precisions[i + 1] > precisions[i] {
            precisions[i] = precisions[i + 1];
        }
    }

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..recalls.len() {
        let dr = recalls[i] - prev_recall;
        if dr > 0.0 {
            ap += dr * precisions[i];
            prev_recall = recalls[i];
        }
    }
    Some(ap)
}

/// Per-class AP at every reported threshold plus the class-mean summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// AP keyed by `(class_id, threshold_percent)`. `None` marks classes
    /// with neither predictions nor ground truth at that threshold.
    pub per_class: BTreeMap<(usize, u32), Option<f64>>,
    /// Class-mean AP per threshold percent.
    pub map_at: BTreeMap<u32, f64>,
    /// Mean of the per-threshold means over 0.50:0.05:0.95.
    pub map50_95: f64,
}

impl MapReport {
    pub fn map30(&self) -> f64 {
        self.map_at[&30]
    }
    pub fn map50(&self) -> f64 {
        self.map_at[&50]
    }
    pub fn map70(&self) -> f64 {
        self.map_at[&70]
    }
}

/// Evaluate AP for every class at the fixed and ranged thresholds.
pub fn map_report(samples: &[EvalSample], num_classes: usize) -> MapReport {
    let mut thresholds: Vec<u32> = FIXED_THRESHOLDS.to_vec();
    for t in MAP_RANGE_THRESHOLDS {
        if !thresholds.contains(&t) {
            thresholds.push(t);
        }
    }
    thresholds.sort_unstable();

    let mut per_class = BTreeMap::new();
    let mut map_at = BTreeMap::new();
    for &pct in &thresholds {
        let thr = pct as f64 / 100.0;
        let mut sum = 0.0;
        let mut n = 0usize;
        for class_id in 0..num_classes {
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for (img, s) in samples.iter().enumerate() {
                for d in &s.detections {
                    if d.class_id == class_id {
                        preds.push((img, d.score, d.bbox));
                    }
                }
                for g in &s.truths {
                    if g.class_id == class_id {
                        gts.push((img, g.bbox));
                    }
                }
            }
            let ap = average_precision(&preds, &gts, thr);
            if let Some(v) = ap {
                sum += v;
                n += 1;
            }
            per_class.insert((class_id, pct), ap);
        }
        map_at.insert(pct, if n > 0 { sum / n as f64 } else { 0.0 });
    }

    let map50_95 =
        MAP_RANGE_THRESHOLDS.iter().map(|t| map_at[t]).sum::<f64>() / MAP_RANGE_THRESHOLDS.len() as f64;

    MapReport { per_class, map_at, map50_95 }
}

/// Write the metric report CSV: one row per (class, threshold) plus the
/// summary rows. Columns: split, class, threshold, AP.
pub fn write_metrics_csv<W: Write>(report: &MapReport, split: &str, mut out: W) -> io::Result<()> {
    writeln!(out, "split,class,threshold,AP")?;
    for (&(class_id, pct), ap) in &report.per_class {
        let val = match ap {
            Some(v) => format!("{v:.6}"),
            None => "NA".to_string(),
        };
        writeln!(out, "{split},{class_id},{:.2},{val}", pct as f64 / 100.0)?;
    }
    writeln!(out, "{split},all,mAP@30,{:.6}", report.map30())?;
    writeln!(out, "{split},all,mAP@50,{:.6}", report.map50())?;
    writeln!(out, "{split},all,mAP@70,{:.6}", report.map70())?;
    writeln!(out, "{split},all,mAP@50-95,{:.6}", report.map50_95)?;
    Ok(())
}
