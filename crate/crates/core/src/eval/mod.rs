//! Detection post-processing and metrics: IoU, class-wise NMS, and
//! average precision at fixed and ranged IoU thresholds.

mod ap;
mod nms;

pub use ap::{average_precision, map_report, write_metrics_csv, MapReport, MAP_RANGE_THRESHOLDS};
pub use nms::{iou, nms, DEFAULT_NMS_IOU};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): corners must be finite with x1 < x2, y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("score must be finite, got {0}")]
    InvalidScore(f64),
}

/// Axis-aligned box as corner coordinates, `x1 < y2`-ordered on both axes.
///
/// Coordinates are normally in [0,1] image-normalized units, but the
/// geometry here works in any consistent unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, EvalError> {
        let ok = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !ok || x1 >= x2 || y1 >= y2 {
            return Err(EvalError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Build from center/size, clamping the corners into [0,1].
    pub fn from_cxcywh_clamped(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, EvalError> {
        let x1 = (cx - 0.5 * w).clamp(0.0, 1.0);
        let y1 = (cy - 0.5 * h).clamp(0.0, 1.0);
        let x2 = (cx + 0.5 * w).clamp(0.0, 1.0);
        let y2 = (cy + 0.5 * h).clamp(0.0, 1.0);
        Self::new(x1, y1, x2, y2)
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// One detection with its class and confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

impl ScoredDetection {
    pub fn new(bbox: BBox, class_id: usize, score: f64) -> Result<Self, EvalError> {
        if !score.is_finite() {
            return Err(EvalError::InvalidScore(score));
        }
        Ok(Self { bbox, class_id, score })
    }
}

/// One annotated ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Detections and ground truth for a single image.
#[derive(Debug, Clone, Default)]
pub struct EvalSample {
    pub detections: Vec<ScoredDetection>,
    pub truths: Vec<GroundTruth>,
}
