//! Raw grids to scored boxes: sigmoid the logits, threshold, reconstruct
//! corners from the cell-center offsets, then class-wise NMS and a top-K cap.

use crate::detector::DetectionOutput;
use crate::eval::{nms, BBox, ScoredDetection, DEFAULT_NMS_IOU};
use crate::nn::Scalar;

pub const CONF_THRESHOLD: f64 = 0.05;
pub const MAX_DETECTIONS: usize = 100;

/// Decode every sample of a batch; one detection list per sample, each
/// sorted by descending score and capped at [`MAX_DETECTIONS`].
pub fn decode_batch<S: Scalar>(out: &DetectionOutput<S>) -> Vec<Vec<ScoredDetection>> {
    let n = out.scales[0].cls.dim().0;
    (0..n).map(|i| decode_sample(out, i)).collect()
}

fn decode_sample<S: Scalar>(out: &DetectionOutput<S>, sample: usize) -> Vec<ScoredDetection> {
    let mut cands = Vec::new();
    for sc in &out.scales {
        let (_, classes, gh, gw) = sc.cls.dim();
        for gy in 0..gh {
            for gx in 0..gw {
                let ccx = (gx as f64 + 0.5) / gw as f64;
                let ccy = (gy as f64 + 0.5) / gh as f64;
                let l = sc.reg[[sample, 0, gy, gx]].to_f64();
                let t = sc.reg[[sample, 1, gy, gx]].to_f64();
                let r = sc.reg[[sample, 2, gy, gx]].to_f64();
                let b = sc.reg[[sample, 3, gy, gx]].to_f64();
                let x1 = (ccx - l).clamp(0.0, 1.0);
                let y1 = (ccy - t).clamp(0.0, 1.0);
                let x2 = (ccx + r).clamp(0.0, 1.0);
                let y2 = (ccy + b).clamp(0.0, 1.0);
                if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
                    continue;
                }
                let bbox = BBox::new(x1, y1, x2, y2).expect("clamped box is valid");
                for c in 0..classes {
                    let score = sigmoid(sc.cls[[sample, c, gy, gx]].to_f64());
                    if score >= CONF_THRESHOLD {
                        cands.push(ScoredDetection::new(bbox, c, score).expect("finite score"));
                    }
                }
            }
        }
    }
    let mut kept = nms(&cands, DEFAULT_NMS_IOU);
    kept.truncate(MAX_DETECTIONS);
    kept
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
