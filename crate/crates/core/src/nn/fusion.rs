//! Primary-auxiliary fusion: the auxiliary stream is projected by a plain
//! 1×1 convolution, bilinearly resized onto the primary grid, then merged
//! by one of three options — channel-gated sum, plain sum, or a learned
//! scalar blend. Gate and blend scalars start at zero so a fresh exchanger
//! perturbs nothing.

use ndarray::{Array2, Array4};

use super::arena::{ParamArena, ParamId, TouchedSet};
use super::layers::PlainConv;
use super::ops::{
    ConvCache, bilinear_resize, bilinear_resize_backward, gap_hw, gap_hw_backward, sigmoid,
};
use super::{Scalar, zeros};

/// How the resized auxiliary projection joins the primary stream.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FusionOption {
    /// `primary + sigmoid(γ·GAP(aux)) ⊙ aux`, gated per sample and channel.
    Gated,
    /// `primary + aux`.
    Sum,
    /// `primary + λ·aux`.
    Scaled,
}

impl FusionOption {
    /// Options are numbered 1..=3 in genes and configs.
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            1 => Some(FusionOption::Gated),
            2 => Some(FusionOption::Sum),
            3 => Some(FusionOption::Scaled),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            FusionOption::Gated => 1,
            FusionOption::Sum => 2,
            FusionOption::Scaled => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fusion {
    pub proj: PlainConv,
    /// Gate sharpness for [`FusionOption::Gated`]; absent when a fixed
    /// architecture realizes another option.
    pub gamma: Option<ParamId>,
    /// Blend weight for [`FusionOption::Scaled`]; same presence rule.
    pub lambda: Option<ParamId>,
}

struct GateCache<S: Scalar> {
    g: Array2<S>,
    w: Array2<S>,
    gamma: S,
}

pub struct FusionCache<S: Scalar> {
    f: Array4<S>,
    proj: ConvCache<S>,
    aux_hw: (usize, usize),
    option: FusionOption,
    gate: Option<GateCache<S>>,
    lambda_v: S,
}

impl Fusion {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        params: &mut ParamArena<S>,
        name: &str,
        ca_max: usize,
        cp_max: usize,
        with_gamma: bool,
        with_lambda: bool,
        seed: u64,
    ) -> Self {
        let proj = PlainConv::new(params, &format!("{name}.proj"), ca_max, cp_max, 1, 1, 0, 0.0, seed);
        let gamma = with_gamma.then(|| params.add(format!("{name}.gamma"), zeros(&[1])));
        let lambda = with_lambda.then(|| params.add(format!("{name}.lambda"), zeros(&[1])));
        Fusion { proj, gamma, lambda }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &ParamArena<S>,
        primary: &Array4<S>,
        aux: &Array4<S>,
        option: FusionOption,
    ) -> (Array4<S>, FusionCache<S>) {
        let (_, cp, hp, wp) = primary.dim();
        let (_, _, ha, wa) = aux.dim();
        let (fp, proj) = self.proj.forward(params, aux, cp);
        let f = bilinear_resize(&fp, hp, wp);

        let (out, gate, lambda_v) = match option {
            FusionOption::Sum => (primary + &f, None, S::zero()),
            FusionOption::Scaled => {
                let id = self.lambda.expect("scaled fusion requires lambda");
                let lv = params.value(id)[[0]];
                (primary + &f.mapv(|v| v * lv), None, lv)
            }
            FusionOption::Gated => {
                let id = self.gamma.expect("gated fusion requires gamma");
                let gv = params.value(id)[[0]];
                let g = gap_hw(&f);
                let w = g.mapv(|v| sigmoid(gv * v));
                let mut out = primary.clone();
                let (n, c, h, ww) = out.dim();
                for ni in 0..n {
                    for ci in 0..c {
                        let wv = w[[ni, ci]];
                        for y in 0..h {
                            for xo in 0..ww {
                                out[[ni, ci, y, xo]] =
                                    out[[ni, ci, y, xo]] + wv * f[[ni, ci, y, xo]];
                            }
                        }
                    }
                }
                (out, Some(GateCache { g, w, gamma: gv }), S::zero())
            }
        };
        (out, FusionCache { f, proj, aux_hw: (ha, wa), option, gate, lambda_v })
    }

    /// Returns `(dprimary, daux)`.
    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamArena<S>,
        touched: &mut TouchedSet,
        gout: &Array4<S>,
        cache: &FusionCache<S>,
    ) -> (Array4<S>, Array4<S>) {
        let f = &cache.f;
        let df = match cache.option {
            FusionOption::Sum => gout.clone(),
            FusionOption::Scaled => {
                let id = self.lambda.expect("scaled fusion requires lambda");
                let dl: S =
                    gout.iter().zip(f.iter()).fold(S::zero(), |acc, (&g, &v)| acc + g * v);
                params.grad_mut(id)[[0]] = params.grad_mut(id)[[0]] + dl;
                touched.mark(id, &[1]);
                gout.mapv(|v| v * cache.lambda_v)
            }
            FusionOption::Gated => {
                let gate = cache.gate.as_ref().expect("gated cache");
                let id = self.gamma.expect("gated fusion requires gamma");
                let (n, c, h, ww) = f.dim();
                let mut df = Array4::<S>::zeros((n, c, h, ww));
                let mut dw = Array2::<S>::zeros((n, c));
                for ni in 0..n {
                    for ci in 0..c {
                        let wv = gate.w[[ni, ci]];
                        let mut acc = S::zero();
                        for y in 0..h {
                            for xo in 0..ww {
                                let g = gout[[ni, ci, y, xo]];
                                df[[ni, ci, y, xo]] = g * wv;
                                acc = acc + g * f[[ni, ci, y, xo]];
                            }
                        }
                        dw[[ni, ci]] = acc;
                    }
                }
                // w = σ(γ·g): dz = dw·w·(1−w), dγ = Σ dz·g, dg = dz·γ
                let mut dgamma = S::zero();
                let mut dg = Array2::<S>::zeros((n, c));
                for ni in 0..n {
                    for ci in 0..c {
                        let wv = gate.w[[ni, ci]];
                        let dz = dw[[ni, ci]] * wv * (S::one() - wv);
                        dgamma = dgamma + dz * gate.g[[ni, ci]];
                        dg[[ni, ci]] = dz * gate.gamma;
                    }
                }
                params.grad_mut(id)[[0]] = params.grad_mut(id)[[0]] + dgamma;
                touched.mark(id, &[1]);
                df + &gap_hw_backward(&dg, h, ww)
            }
        };
        let dproj_out = bilinear_resize_backward(&df, cache.aux_hw.0, cache.aux_hw.1);
        let daux = self.proj.backward(params, touched, &dproj_out, &cache.proj);
        (gout.clone(), daux)
    }
}
