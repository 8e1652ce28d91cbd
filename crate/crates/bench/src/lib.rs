//! Shared fixtures for the criterion benches.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use radnas_core::rdmap::LoadedSample;
use radnas_core::{Annotation, ModelConfig, RDMap, RepresentationPair};

/// In-memory sample on a 64x64 grid with one box per class parity.
pub fn synth_sample(rng: &mut ChaCha8Rng, id: usize) -> LoadedSample {
    let rd = RDMap::new(Array2::from_shape_fn((64, 64), |_| {
        rng.random_range(-40.0f32..0.0)
    }))
    .expect("finite by construction");
    let pair = RepresentationPair::from_rd(&rd, None);
    LoadedSample {
        sample_id: format!("bench{id:04}"),
        rd,
        pair,
        annotations: vec![Annotation {
            class_id: id % 2,
            cx: 0.3 + 0.4 * (id % 3) as f64 / 2.0,
            cy: 0.5,
            w: 0.2,
            h: 0.15,
        }],
    }
}

pub fn synth_samples(n: usize, seed: u64) -> Vec<LoadedSample> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| synth_sample(&mut rng, i)).collect()
}

/// Stack the first `n` samples into network inputs.
pub fn stack(samples: &[LoadedSample], n: usize) -> (Array4<f32>, Array4<f32>) {
    let (h, w) = (
        samples[0].pair.heatmap.dim().1,
        samples[0].pair.heatmap.dim().2,
    );
    let mut heat = Array4::zeros((n, 3, h, w));
    let mut gray = Array4::zeros((n, 1, h, w));
    for (i, s) in samples.iter().take(n).enumerate() {
        heat.index_axis_mut(ndarray::Axis(0), i).assign(&s.pair.heatmap);
        gray.index_axis_mut(ndarray::Axis(0), i).assign(&s.pair.grayscale);
    }
    (heat, gray)
}

/// Width profile used by the desk-scale pipeline config.
pub fn desk_config() -> ModelConfig {
    ModelConfig {
        backbone_widths: [8, 16, 32, 64, 128],
        stem_width: 16,
        neckhead_widths: [32, 64, 128],
        ..ModelConfig::default()
    }
}

/// Narrower profile for sizing experiments.
pub fn slim_config() -> ModelConfig {
    ModelConfig {
        backbone_widths: [4, 8, 16, 32, 64],
        stem_width: 8,
        neckhead_widths: [16, 32, 64],
        ..ModelConfig::default()
    }
}
