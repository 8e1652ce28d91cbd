//! Candidate scoring against the shared supernet: slice out the gene's
//! weights, recalibrate the batch-norm statistics on a handful of training
//! batches, then measure mAP@50 on held-out data.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::train::stack_batch;
use crate::detector::{decode_batch, DetectorError, Model};
use crate::eval::{map_report, BBox, EvalSample, GroundTruth};
use crate::nn::{BnMode, Scalar};
use crate::rdmap::{Annotation, LoadedSample};

use super::space::{realize, ArchitectureGene, SearchSpace};
use super::NasError;

/// One evaluated architecture. `iteration` is the search generation that
/// first scored it (0 for the initial population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub gene: ArchitectureGene,
    pub gene_id: String,
    pub iteration: usize,
    pub fitness: f64,
    pub params: usize,
    pub flops: u64,
}

/// Pre-stacked batches for candidate scoring. Recalibration batches come
/// from the training split; validation batches carry their labels.
#[derive(Debug, Clone)]
pub struct EvalContext<S: Scalar> {
    pub recalib: Vec<(Array4<S>, Array4<S>)>,
    pub val: Vec<(Array4<S>, Array4<S>, Vec<Vec<Annotation>>)>,
}

impl<S: Scalar> EvalContext<S> {
    /// Stack `recalib_samples` and `val_samples` into fixed-size batches.
    pub fn new(
        recalib_samples: &[LoadedSample],
        val_samples: &[LoadedSample],
        batch_size: usize,
    ) -> Self {
        assert!(batch_size > 0, "batch_size must be positive");
        // No augmentation here, so the RNG is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut recalib = Vec::new();
        for chunk in recalib_samples.chunks(batch_size) {
            let refs: Vec<&LoadedSample> = chunk.iter().collect();
            let (heat, gray, _) = stack_batch::<S>(&refs, false, &mut rng);
            recalib.push((heat, gray));
        }
        let mut val = Vec::new();
        for chunk in val_samples.chunks(batch_size) {
            let refs: Vec<&LoadedSample> = chunk.iter().collect();
            let (heat, gray, anns) = stack_batch::<S>(&refs, false, &mut rng);
            val.push((heat, gray, anns));
        }
        EvalContext { recalib, val }
    }
}

fn truths_of(anns: &[Annotation]) -> Vec<GroundTruth> {
    anns.iter()
        .map(|a| GroundTruth {
            bbox: BBox::from_cxcywh_clamped(a.cx, a.cy, a.w, a.h)
                .expect("dataset annotations are validated on load"),
            class_id: a.class_id,
        })
        .collect()
}

/// Score `gene` by weight inheritance: forward the sampled slice of the
/// supernet. Running statistics are recalibrated as a cumulative mean over
/// the context's recalibration batches and restored afterwards, so
/// evaluation order cannot leak between candidates.
pub fn evaluate_fitness<S: Scalar>(
    supernet: &mut Model<S>,
    space: &SearchSpace,
    gene: &ArchitectureGene,
    ctx: &EvalContext<S>,
) -> Result<f64, NasError> {
    let r = realize(space, gene, &supernet.config)?;
    if ctx.recalib.is_empty() {
        eprintln!("warning: no recalibration batches; scoring with inherited statistics");
    }
    let saved = supernet.bufs.clone();
    let scored = (|| {
        for (step, (heat, gray)) in ctx.recalib.iter().enumerate() {
            supernet.forward(heat, gray, &r, BnMode::Recalib { step })?;
        }
        let mut samples = Vec::new();
        for (heat, gray, anns) in &ctx.val {
            let (out, _) = supernet.forward(heat, gray, &r, BnMode::Eval)?;
            for (dets, a) in decode_batch(&out).into_iter().zip(anns) {
                samples.push(EvalSample { detections: dets, truths: truths_of(a) });
            }
        }
        Ok::<f64, DetectorError>(map_report(&samples, supernet.config.num_classes).map50())
    })();
    supernet.bufs = saved;
    Ok(scored?)
}

/// Materialize the gene as a standalone fixed model carrying the supernet's
/// weight slices and statistics.
pub fn extract_subnet<S: Scalar>(
    supernet: &Model<S>,
    space: &SearchSpace,
    gene: &ArchitectureGene,
) -> Result<Model<S>, NasError> {
    let r = realize(space, gene, &supernet.config)?;
    Ok(supernet.extract_subnet(&r)?)
}
