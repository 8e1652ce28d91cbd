//! Range-Doppler map handling: synthesis, `.rdm` file I/O, dataset
//! manifests, and the two network input representations.
//!
//! An RD map is a 2-D intensity grid in dB with range bins along the
//! first axis and Doppler bins along the second. Each map is encoded
//! into an aligned pair of tensors: a 3-channel pseudo-color heatmap and
//! a 1-channel min-max grayscale image, both in [0,1].

mod dataset;
mod format;
mod synth;
mod transform;

pub use dataset::{Dataset, LoadedSample};
pub use format::{decode_adc, decode_rdm, encode_adc, encode_rdm, read_adc, read_rdm, write_adc, write_rdm};
pub use synth::{synth_generate, SynthConfig, SynthOutput};
pub use transform::{adc_to_rd, heatmap_lut, to_grayscale, to_heatmap};

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdmapError {
    #[error("ADC cube must be at least 2x2, got {rows}x{cols}")]
    CubeTooSmall { rows: usize, cols: usize },
    #[error("non-finite value at [{row}, {col}] in {what}")]
    NonFinite { what: &'static str, row: usize, col: usize },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not an RDM file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: corrupt RDM header or truncated payload")]
    BadFormat { path: PathBuf },
    #[error("manifest {path} line {line}: {reason}")]
    MalformedManifest { path: PathBuf, line: usize, reason: String },
    #[error("sample {sample_id}: annotation invalid: {reason}")]
    BadAnnotation { sample_id: String, reason: String },
    #[error("sample {sample_id}: RD file missing or unreadable: {path}")]
    MissingRdFile { sample_id: String, path: PathBuf },
    #[error("synthesis config invalid: {0}")]
    BadSynthConfig(String),
}

/// Raw ADC frame: complex samples, slow-time chirps by fast-time samples.
#[derive(Debug, Clone)]
pub struct RawADCCube {
    samples: Array2<Complex64>,
}

impl RawADCCube {
    pub fn new(samples: Array2<Complex64>) -> Result<Self, RdmapError> {
        let (rows, cols) = samples.dim();
        if rows < 2 || cols < 2 {
            return Err(RdmapError::CubeTooSmall { rows, cols });
        }
        for ((r, c), v) in samples.indexed_iter() {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(RdmapError::NonFinite { what: "ADC cube", row: r, col: c });
            }
        }
        Ok(Self { samples })
    }

    pub fn chirps(&self) -> usize {
        self.samples.dim().0
    }

    pub fn fast_time_samples(&self) -> usize {
        self.samples.dim().1
    }

    pub fn samples(&self) -> &Array2<Complex64> {
        &self.samples
    }
}

/// Range-Doppler intensity grid in dB, `[range_bins, doppler_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RDMap {
    intensity: Array2<f32>,
}

impl RDMap {
    pub fn new(intensity: Array2<f32>) -> Result<Self, RdmapError> {
        for ((r, c), v) in intensity.indexed_iter() {
            if !v.is_finite() {
                return Err(RdmapError::NonFinite { what: "RD map", row: r, col: c });
            }
        }
        Ok(Self { intensity })
    }

    pub fn range_bins(&self) -> usize {
        self.intensity.dim().0
    }

    pub fn doppler_bins(&self) -> usize {
        self.intensity.dim().1
    }

    pub fn intensity(&self) -> &Array2<f32> {
        &self.intensity
    }

    /// Bilinear-resample the map to a new bin grid.
    pub fn resized(&self, height: usize, width: usize) -> RDMap {
        let (h0, w0) = self.intensity.dim();
        if (h0, w0) == (height, width) {
            return self.clone();
        }
        let mut out = Array2::<f32>::zeros((height, width));
        let sy = h0 as f32 / height as f32;
        let sx = w0 as f32 / width as f32;
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h0 - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h0 - 1);
            let ty = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w0 - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w0 - 1);
                let tx = fx - x0 as f32;
                let top = self.intensity[[y0, x0]] * (1.0 - tx) + self.intensity[[y0, x1]] * tx;
                let bot = self.intensity[[y1, x0]] * (1.0 - tx) + self.intensity[[y1, x1]] * tx;
                out[[y, x]] = top * (1.0 - ty) + bot * ty;
            }
        }
        RDMap { intensity: out }
    }
}

/// The aligned network inputs derived from one RD map: a `[3, H, W]`
/// pseudo-color heatmap and a `[1, H, W]` grayscale image, both in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationPair {
    pub heatmap: Array3<f32>,
    pub grayscale: Array3<f32>,
}

impl RepresentationPair {
    /// Build both representations from a map, optionally resampling to a
    /// target bin grid first so the pair matches the network input size.
    pub fn from_rd(rd: &RDMap, resize: Option<(usize, usize)>) -> RepresentationPair {
        let resized;
        let rd = match resize {
            Some((h, w)) if (h, w) != (rd.range_bins(), rd.doppler_bins()) => {
                resized = rd.resized(h, w);
                &resized
            }
            _ => rd,
        };
        RepresentationPair { heatmap: to_heatmap(rd), grayscale: to_grayscale(rd) }
    }

    pub fn height(&self) -> usize {
        self.grayscale.dim().1
    }

    pub fn width(&self) -> usize {
        self.grayscale.dim().2
    }

    /// Mirror both representations along the Doppler (width) axis.
    pub fn flipped_doppler(&self) -> RepresentationPair {
        let flip = |a: &Array3<f32>| {
            let mut b = a.clone();
            b.invert_axis(ndarray::Axis(2));
            b
        };
        RepresentationPair { heatmap: flip(&self.heatmap), grayscale: flip(&self.grayscale) }
    }
}

/// One labeled object: class and a normalized center-size box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Annotation {
    /// Check the box lies fully inside the unit square with positive size.
    pub fn validate(&self) -> Result<(), String> {
        let vals = [self.cx, self.cy, self.w, self.h];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite box field".into());
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("non-positive size w={} h={}", self.w, self.h));
        }
        let (x1, y1) = (self.cx - 0.5 * self.w, self.cy - 0.5 * self.h);
        let (x2, y2) = (self.cx + 0.5 * self.w, self.cy + 0.5 * self.h);
        if x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0 {
            return Err(format!("box [{x1:.4}, {y1:.4}, {x2:.4}, {y2:.4}] leaves the unit square"));
        }
        Ok(())
    }

    /// Mirror along the Doppler (x) axis.
    pub fn flipped_x(&self) -> Annotation {
        Annotation { cx: 1.0 - self.cx, ..*self }
    }
}

/// Dataset split identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One manifest line: a sample id, its RD file path (relative to the
/// manifest), and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub rd: String,
    pub labels: Vec<ManifestLabel>,
}

/// Wire form of one label in `manifest.jsonl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestLabel {
    pub cls: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<ManifestLabel> for Annotation {
    fn from(l: ManifestLabel) -> Self {
        Annotation { class_id: l.cls, cx: l.cx, cy: l.cy, w: l.w, h: l.h }
    }
}

impl From<Annotation> for ManifestLabel {
    fn from(a: Annotation) -> Self {
        ManifestLabel { cls: a.class_id, cx: a.cx, cy: a.cy, w: a.w, h: a.h }
    }
}

/// An ordered list of manifest records for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, split: Split) -> Result<Self, RdmapError> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.sample_id.clone()) {
                return Err(RdmapError::MalformedManifest {
                    path: PathBuf::new(),
                    line: i + 1,
                    reason: format!("duplicate sample_id {:?}", r.sample_id),
                });
            }
        }
        Ok(Self { records, split })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
