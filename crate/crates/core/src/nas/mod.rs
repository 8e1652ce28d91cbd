//! One-shot search over the elastic detector: the gene/space vocabulary,
//! samplers, analytic cost models, supernet-based fitness, and the
//! evolutionary loop.

pub mod cost;
pub mod evolve;
pub mod fitness;
pub mod sample;
pub mod space;

use std::path::PathBuf;

use crate::detector::DetectorError;

pub use cost::{count_params, estimate_flops};
pub use evolve::{evolve_search, SearchConfig};
pub use fitness::{evaluate_fitness, extract_subnet, Candidate, EvalContext};
pub use sample::{crossover, mutate, sample_uniform};
pub use space::{realize, ArchitectureGene, BlockKind, ChoiceBlockSpec, SearchSpace};

#[derive(Debug, thiserror::Error)]
pub enum NasError {
    #[error("gene rejected at block {block}: {reason}")]
    BadGene { block: String, reason: String },
    #[error("invalid search space: {0}")]
    BadSpace(String),
    #[error("search space has no counterpart in the model config at block {block}")]
    SpaceConfigMismatch { block: String },
    #[error("gene was written for space {found}, expected {expected}")]
    GeneFileMismatch { expected: String, found: String },
    #[error("no constraint-satisfying architecture found: {constraint}")]
    Infeasible { constraint: String },
    #[error("{path}: {reason}")]
    BadFormat { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}
