//! Minibatch SGD for fixed subnets and the weight-sharing supernet.
//!
//! The optimizer holds full-width momentum buffers but applies updates only
//! to the parameter slices the backward pass touched, so a supernet step
//! leaves unsampled channel tails bit-identical.

use ndarray::{Array4, ArrayD, Axis, Slice};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::loss_and_grads;
use super::{DetectorError, Model, Realization};
use crate::nas::sample::sample_uniform;
use crate::nas::space::{realize, SearchSpace};
use crate::nn::{BnMode, ParamArena, Scalar, TouchedSet};
use crate::rdmap::{Annotation, LoadedSample};

/// EMA factor folded into the running batch-norm statistics each step.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub augment_flip: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 300,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            augment_flip: false,
        }
    }
}

/// One optimizer step's losses, in step order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub cls_loss: f64,
    pub box_loss: f64,
}

struct Sgd<S: Scalar> {
    velocity: Vec<ArrayD<S>>,
}

impl<S: Scalar> Sgd<S> {
    fn new(params: &ParamArena<S>) -> Self {
        let velocity = params.ids().map(|id| ArrayD::zeros(params.value(id).raw_dim())).collect();
        Sgd { velocity }
    }

    /// `v = momentum * v + g; w -= lr * v`, restricted to the touched prefix
    /// slices.
    fn step(&mut self, params: &mut ParamArena<S>, touched: &TouchedSet, lr: f64, momentum: f64) {
        let lr = S::from_f64(lr);
        let mu = S::from_f64(momentum);
        for (id, extent) in touched.iter() {
            let v = &mut self.velocity[id.0];
            {
                let g = params.grad(id);
                let mut vs = v.slice_each_axis_mut(|ax| prefix(extent, ax.axis));
                let gs = g.slice_each_axis(|ax| prefix(extent, ax.axis));
                vs.zip_mut_with(&gs, |v, &g| *v = mu * *v + g);
            }
            let w = params.value_mut(id);
            let mut ws = w.slice_each_axis_mut(|ax| prefix(extent, ax.axis));
            let vs = v.slice_each_axis(|ax| prefix(extent, ax.axis));
            ws.zip_mut_with(&vs, |w, &v| *w = *w - lr * v);
        }
    }
}

fn prefix(extent: &[usize], axis: Axis) -> Slice {
    Slice::from(0..extent[axis.index()])
}

/// Stack a minibatch into `[N, C, H, W]` tensors for both representations.
/// With `flip` set, each sample is mirrored in range with probability one
/// half, consuming one RNG draw per sample.
pub(crate) fn stack_batch<S: Scalar>(
    batch: &[&LoadedSample],
    flip: bool,
    rng: &mut ChaCha8Rng,
) -> (Array4<S>, Array4<S>, Vec<Vec<Annotation>>) {
    let n = batch.len();
    let (ch, hh, wh) = batch[0].pair.heatmap.dim();
    let (cg, hg, wg) = batch[0].pair.grayscale.dim();
    let mut heat = Array4::<S>::zeros((n, ch, hh, wh));
    let mut gray = Array4::<S>::zeros((n, cg, hg, wg));
    let mut targets = Vec::with_capacity(n);
    for (i, s) in batch.iter().enumerate() {
        assert_eq!(s.pair.heatmap.dim(), (ch, hh, wh), "mixed grids in one batch");
        let mirror = flip && rng.random::<bool>();
        for (src, dst) in [(&s.pair.heatmap, &mut heat), (&s.pair.grayscale, &mut gray)] {
            let mut view = dst.index_axis_mut(Axis(0), i);
            if mirror {
                let flipped = src.slice_each_axis(|ax| {
                    if ax.axis == Axis(2) { Slice::new(0, None, -1) } else { Slice::from(..) }
                });
                view.zip_mut_with(&flipped, |d, &v| *d = S::from_f64(v as f64));
            } else {
                view.zip_mut_with(src, |d, &v| *d = S::from_f64(v as f64));
            }
        }
        let mut anns = s.annotations.clone();
        if mirror {
            for a in &mut anns {
                a.cx = 1.0 - a.cx;
            }
        }
        targets.push(anns);
    }
    (heat, gray, targets)
}

/// Train the model at its own fixed capacities.
pub fn train_fixed<S: Scalar>(
    model: &mut Model<S>,
    samples: &[LoadedSample],
    hyper: &TrainHyper,
) -> Result<Vec<TrainLogRow>, DetectorError> {
    let r = model.caps.clone();
    train_impl(model, samples, hyper, move |_| r.clone())
}

/// Train a supernet by sampling one architecture uniformly from `space` per
/// optimizer step; only the sampled slices receive gradient.
pub fn train_supernet<S: Scalar>(
    model: &mut Model<S>,
    space: &SearchSpace,
    samples: &[LoadedSample],
    hyper: &TrainHyper,
) -> Result<Vec<TrainLogRow>, DetectorError> {
    let config = model.config.clone();
    // Surface space/config disagreements before the loop rather than deep in
    // an epoch.
    realize(space, &space.full_width_gene(), &config)
        .map_err(|e| DetectorError::BadConfig(e.to_string()))?;
    train_impl(model, samples, hyper, move |rng| {
        let gene = sample_uniform(space, rng);
        realize(space, &gene, &config).expect("space was checked against the config")
    })
}

fn train_impl<S: Scalar>(
    model: &mut Model<S>,
    samples: &[LoadedSample],
    hyper: &TrainHyper,
    mut pick: impl FnMut(&mut ChaCha8Rng) -> Realization,
) -> Result<Vec<TrainLogRow>, DetectorError> {
    if samples.is_empty() {
        return Err(DetectorError::BadConfig("training set is empty".into()));
    }
    if hyper.batch_size == 0 {
        return Err(DetectorError::BadConfig("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = Sgd::new(&model.params);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let r = pick(&mut rng);
            let batch: Vec<&LoadedSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (heat, gray, targets) = stack_batch(&batch, hyper.augment_flip, &mut rng);
            let (out, trace) =
                model.forward(&heat, &gray, &r, BnMode::Train { momentum: BN_MOMENTUM })?;
            let (breakdown, gcls, greg) = loss_and_grads(&out, &targets);
            if !breakdown.total.is_finite() {
                return Err(DetectorError::Diverged { step });
            }
            model.params.zero_grads();
            let mut touched = TouchedSet::new();
            model.backward(&gcls, &greg, &trace, &mut touched);
            opt.step(&mut model.params, &touched, hyper.lr, hyper.momentum);
            log.push(TrainLogRow {
                step,
                epoch,
                loss: breakdown.total,
                cls_loss: breakdown.cls_loss,
                box_loss: breakdown.box_loss,
            });
            step += 1;
        }
    }
    Ok(log)
}
