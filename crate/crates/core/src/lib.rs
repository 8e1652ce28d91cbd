//! Range-Doppler radar object detection with a dual-branch adapter network
//! and one-shot width/fusion architecture search.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`rdmap`]: RD map synthesis, `.rdm` file I/O, and the two input
//!   representations (pseudo-color heatmap and min-max grayscale).
//! - [`nn`]: elastic-width convolution blocks and the adapter components
//!   (coordinate attention, primary-auxiliary fusion, exchanger, stem),
//!   with hand-rolled forward and backward passes.
//! - [`detector`]: the assembled dual-branch detector, its anchor-free
//!   loss, and supernet / fixed-architecture training.
//! - [`nas`]: search-space definition, gene encoding, cost models, weight
//!   inheritance with statistics recalibration, and evolutionary search.
//! - [`eval`]: IoU, class-wise NMS, and average-precision metrics.
//!
//! Everything is deterministic given an explicit seed: sampling goes
//! through seeded ChaCha generators and all floating-point reductions run
//! in a fixed order.

pub mod detector;
pub mod eval;
pub mod nas;
pub mod nn;
pub mod rdmap;

pub use detector::{DetectionOutput, LossBreakdown, Model, ModelConfig, Realization};
pub use eval::{BBox, GroundTruth, MapReport, ScoredDetection};
pub use nas::{ArchitectureGene, Candidate, SearchConfig, SearchSpace};
pub use rdmap::{Annotation, DatasetManifest, RDMap, RawADCCube, RepresentationPair};
