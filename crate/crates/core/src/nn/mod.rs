//! Hand-rolled neural-network substrate: named parameter storage, the
//! elastic-width convolution block, coordinate attention,
//! primary-auxiliary fusion, the exchanger, and the adapter stem.
//!
//! Every block exposes an explicit `forward` returning a cache and a
//! `backward` consuming it; there is no tape. All math is generic over
//! [`Scalar`] so gradient checks run in f64 while training runs in f32.

mod arena;
pub mod attention;
pub mod exchanger;
pub mod fusion;
pub mod layers;
pub mod ops;
pub mod stem;

pub use arena::{BufArena, BufId, ParamArena, ParamId, TouchedSet};

use std::fmt::{Debug, Display};

/// Structural failures raised while running network blocks.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("stem input {h}x{w}: height and width must be divisible by 4")]
    StemInputNotDivisible { h: usize, w: usize },
}

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Element type of all tensors: f32 for training, f64 for gradient checks.
pub trait Scalar:
    LinalgScalar + Float + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Batch-normalization statistics handling per forward pass.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum BnMode {
    /// Normalize by batch statistics and fold them into the running
    /// estimates with the given EMA momentum.
    Train { momentum: f64 },
    /// Normalize by the stored running statistics; nothing is updated.
    Eval,
    /// Normalize by batch statistics and merge them into the running
    /// estimates as a cumulative mean; `step` counts prior recalibration
    /// batches (0 overwrites).
    Recalib { step: usize },
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-parameter RNG derived from the global seed and the parameter's
/// name, so a tensor's initial values depend on neither construction
/// order nor the presence of other parameters.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(name.as_bytes())))
}

/// He-style uniform init with bound sqrt(6 / fan_in).
pub fn init_uniform<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<S> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data length")
}

pub fn zeros<S: Scalar>(shape: &[usize]) -> ArrayD<S> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn full<S: Scalar>(shape: &[usize], v: f64) -> ArrayD<S> {
    ArrayD::from_elem(IxDyn(shape), S::from_f64(v))
}
