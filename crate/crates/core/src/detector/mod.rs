//! Dual-branch range-Doppler detector: elastic-width backbone/neck/head plus
//! an adapter branch (stem + exchangers) grafted onto the main stream.

pub mod checkpoint;
pub mod decode;
pub mod loss;
pub mod model;
pub mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::nn::fusion::FusionOption;
use crate::nn::NnError;
use ndarray::Array4;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use decode::{decode_batch, CONF_THRESHOLD, MAX_DETECTIONS};
pub use loss::{compute_loss, LAMBDA_BOX};
pub use model::Model;
pub use train::{train_fixed, train_supernet, TrainHyper, TrainLogRow};

/// Which representation of the pair feeds the main (backbone) branch. The
/// other one feeds the adapter stem.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    HeatToBackbone,
    GrayToBackbone,
}

impl Routing {
    pub fn backbone_channels(self) -> usize {
        match self {
            Routing::HeatToBackbone => 3,
            Routing::GrayToBackbone => 1,
        }
    }

    pub fn adapter_channels(self) -> usize {
        match self {
            Routing::HeatToBackbone => 1,
            Routing::GrayToBackbone => 3,
        }
    }
}

/// Adapter ablation toggles. `Detached` drops the auxiliary branch entirely;
/// the other variants keep progressively more of it.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Detached,
    StemOnly,
    Mode1Only,
    Full,
}

impl Variant {
    pub fn has_stem(self) -> bool {
        !matches!(self, Variant::Detached)
    }

    /// Whether an exchanger with the given mode is instantiated.
    pub fn keeps_exchanger(self, mode: u8) -> bool {
        match self {
            Variant::Full => true,
            Variant::Mode1Only => mode == 1,
            Variant::Detached | Variant::StemOnly => false,
        }
    }
}

/// Static model description: capacity widths plus the exchanger layout.
/// Exchanger k attaches at `exchanger_sites[k]` (a backbone stage in 3..=5);
/// the first entry for a stage sits before it, later entries after it, in
/// listed order. Modes are fixed here — genes only vary the fusion option.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub backbone_widths: [usize; 5],
    pub stem_width: usize,
    pub neckhead_widths: [usize; 3],
    pub exchanger_sites: Vec<usize>,
    pub exchanger_modes: Vec<u8>,
    pub routing: Routing,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 2,
            backbone_widths: [16, 32, 64, 128, 256],
            stem_width: 32,
            neckhead_widths: [64, 128, 256],
            exchanger_sites: vec![3, 3, 4, 4, 5, 5, 5],
            exchanger_modes: vec![1, 2, 1, 2, 1, 2, 1],
            routing: Routing::HeatToBackbone,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |msg: String| Err(DetectorError::BadConfig(msg));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.backbone_widths.iter().any(|&w| w == 0)
            || self.stem_width == 0
            || self.neckhead_widths.iter().any(|&w| w == 0)
        {
            return bad("channel widths must be nonzero".into());
        }
        if self.exchanger_sites.len() != self.exchanger_modes.len() {
            return bad(format!(
                "{} exchanger sites but {} modes",
                self.exchanger_sites.len(),
                self.exchanger_modes.len()
            ));
        }
        if let Some(&s) = self.exchanger_sites.iter().find(|&&s| !(3..=5).contains(&s)) {
            return bad(format!("exchanger site {s} outside stages 3..=5"));
        }
        if let Some(&m) = self.exchanger_modes.iter().find(|&&m| m != 1 && m != 2) {
            return bad(format!("exchanger mode {m}: only 1 and 2 exist"));
        }
        if !self.exchanger_sites.is_sorted() {
            return bad("exchanger sites must be listed in nondecreasing stage order".into());
        }
        Ok(())
    }

    pub fn num_exchangers(&self) -> usize {
        self.exchanger_sites.len()
    }

    /// Hash of the canonical JSON encoding; checkpoints carry it so weights
    /// are never loaded into a differently-shaped model.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Concrete channel counts and fusion options for one subnet. For a supernet
/// these are upper bounds (capacities); a forward pass realizes a slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Realization {
    pub backbone: [usize; 5],
    pub stem: [usize; 3],
    pub neckhead: [usize; 3],
    pub fusion: Vec<FusionOption>,
}

impl Realization {
    /// Every width at its capacity; fusion pinned to the gated option.
    pub fn full_width(config: &ModelConfig) -> Self {
        Realization {
            backbone: config.backbone_widths,
            stem: [config.stem_width; 3],
            neckhead: config.neckhead_widths,
            fusion: vec![FusionOption::Gated; config.num_exchangers()],
        }
    }
}

/// One prediction scale: class logits `[N, num_classes, Gh, Gw]` and
/// nonnegative box offsets (l, t, r, b) `[N, 4, Gh, Gw]` in normalized
/// image units, measured from the cell center.
#[derive(Clone, Debug)]
pub struct ScaleOut<S> {
    pub stride: usize,
    pub cls: Array4<S>,
    pub reg: Array4<S>,
}

/// Per-scale grids, finest first (strides 8, 16, 32).
#[derive(Clone, Debug)]
pub struct DetectionOutput<S> {
    pub scales: Vec<ScaleOut<S>>,
}

/// Loss terms; `total = cls_loss + LAMBDA_BOX * box_loss`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub cls_loss: f64,
    pub box_loss: f64,
    pub total: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("gene incompatible with model at block {block}: {reason}")]
    IncompatibleGene { block: String, reason: String },
    #[error("input {h}x{w}: height and width must be divisible by 32")]
    BadInputDims { h: usize, w: usize },
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
