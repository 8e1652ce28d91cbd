//! Convolution layers over arena-stored parameters. The elastic
//! ("universally slimmable") convolution realizes a width by slicing the
//! stored full-width tensors; activations always carry exactly their
//! realized channel count.

use ndarray::{Array2, Array4, ArrayD, Ix4, s};

use super::arena::{BufArena, BufId, ParamArena, ParamId, TouchedSet};
use super::ops::{
    BnCache, ConvCache, bn_backward, bn_forward, conv2d_backward, conv2d_forward, silu_backward,
    silu_forward,
};
use super::{BnMode, Scalar, full, init_uniform, param_rng, zeros};

/// Accumulate a packed `[co, ci·k·k]` gradient into the leading slice of a
/// stored `[Co_max, Ci_max, k, k]` gradient tensor.
fn add_packed_dw<S: Scalar>(grad: &mut ArrayD<S>, dw: &Array2<S>, co: usize, ci: usize) {
    let mut g4 = grad.view_mut().into_dimensionality::<Ix4>().expect("conv weight is 4-D");
    let mut slice = g4.slice_mut(s![0..co, 0..ci, .., ..]);
    for (dst, src) in slice.iter_mut().zip(dw.iter()) {
        *dst = *dst + *src;
    }
}

/// Accumulate a realized-slice vector gradient into the leading elements
/// of a stored 1-D gradient tensor.
fn add_vec<S: Scalar>(grad: &mut ArrayD<S>, d: &[S]) {
    for (i, &v) in d.iter().enumerate() {
        grad[[i]] = grad[[i]] + v;
    }
}

/// Convolution + bias, no normalization or nonlinearity. Used for
/// prediction heads, fusion projections, and attention descriptors.
#[derive(Debug, Clone)]
pub struct PlainConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub ci_max: usize,
    pub co_max: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PlainConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        params: &mut ParamArena<S>,
        name: &str,
        ci_max: usize,
        co_max: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias_init: f64,
        seed: u64,
    ) -> Self {
        let wname = format!("{name}.weight");
        let w = init_uniform(&mut param_rng(seed, &wname), &[co_max, ci_max, k, k], ci_max * k * k);
        let weight = params.add(wname, w);
        let bias = params.add(format!("{name}.bias"), full(&[co_max], bias_init));
        PlainConv { weight, bias, ci_max, co_max, k, stride, pad }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &ParamArena<S>,
        x: &Array4<S>,
        co: usize,
    ) -> (Array4<S>, ConvCache<S>) {
        let ci = x.dim().1;
        assert!(
            ci <= self.ci_max && co <= self.co_max && co >= 1,
            "conv {}: realized {co}x{ci} exceeds stored {}x{}",
            params.name(self.weight),
            self.co_max,
            self.ci_max,
        );
        conv2d_forward(x, params.value(self.weight), params.value(self.bias), co, self.stride, self.pad)
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamArena<S>,
        touched: &mut TouchedSet,
        gout: &Array4<S>,
        cache: &ConvCache<S>,
    ) -> Array4<S> {
        let g = conv2d_backward(gout, cache);
        add_packed_dw(params.grad_mut(self.weight), &g.dw, cache.co, cache.ci);
        touched.mark(self.weight, &[cache.co, cache.ci, self.k, self.k]);
        add_vec(params.grad_mut(self.bias), &g.dbias);
        touched.mark(self.bias, &[cache.co]);
        g.dx
    }
}

/// Elastic convolution block: sliced conv + bias, batch norm over the same
/// channel slice, SiLU. Running statistics are stored full-width and
/// sliced per realized width, shared across widths.
#[derive(Debug, Clone)]
pub struct UsConv {
    pub conv: PlainConv,
    pub bn_scale: ParamId,
    pub bn_shift: ParamId,
    pub bn_mean: BufId,
    pub bn_var: BufId,
}

pub struct UsConvCache<S: Scalar> {
    conv: ConvCache<S>,
    bn: Option<BnCache<S>>,
    pre_act: Array4<S>,
    co: usize,
}

impl UsConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        params: &mut ParamArena<S>,
        bufs: &mut BufArena<S>,
        name: &str,
        ci_max: usize,
        co_max: usize,
        k: usize,
        stride: usize,
        seed: u64,
    ) -> Self {
        let pad = k / 2;
        let conv = PlainConv::new(params, name, ci_max, co_max, k, stride, pad, 0.0, seed);
        let bn_scale = params.add(format!("{name}.bn_scale"), full(&[co_max], 1.0));
        let bn_shift = params.add(format!("{name}.bn_shift"), zeros(&[co_max]));
        let bn_mean = bufs.add(format!("{name}.bn_mean"), zeros(&[co_max]));
        let bn_var = bufs.add(format!("{name}.bn_var"), full(&[co_max], 1.0));
        UsConv { conv, bn_scale, bn_shift, bn_mean, bn_var }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &ParamArena<S>,
        bufs: &mut BufArena<S>,
        x: &Array4<S>,
        co: usize,
        mode: BnMode,
    ) -> (Array4<S>, UsConvCache<S>) {
        let (y, conv_cache) = self.conv.forward(params, x, co);
        let (mean, var) = bufs.two_mut(self.bn_mean, self.bn_var);
        let (y, bn) = bn_forward(
            &y,
            params.value(self.bn_scale),
            params.value(self.bn_shift),
            mean,
            var,
            mode,
        );
        let out = silu_forward(&y);
        (out, UsConvCache { conv: conv_cache, bn, pre_act: y, co })
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamArena<S>,
        touched: &mut TouchedSet,
        gout: &Array4<S>,
        cache: &UsConvCache<S>,
    ) -> Array4<S> {
        let bn = cache.bn.as_ref().expect("backward requires a train-mode forward");
        let g = silu_backward(gout, &cache.pre_act);
        let g = bn_backward(&g, bn);
        add_vec(params.grad_mut(self.bn_scale), &g.dscale);
        touched.mark(self.bn_scale, &[cache.co]);
        add_vec(params.grad_mut(self.bn_shift), &g.dshift);
        touched.mark(self.bn_shift, &[cache.co]);
        self.conv.backward(params, touched, &g.dx, &cache.conv)
    }
}

/// Residual unit: two same-width 3×3 elastic convolutions plus identity.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub bt1: UsConv,
    pub bt2: UsConv,
}

pub struct BottleneckCache<S: Scalar> {
    c1: UsConvCache<S>,
    c2: UsConvCache<S>,
}

impl Bottleneck {
    pub fn new<S: Scalar>(
        params: &mut ParamArena<S>,
        bufs: &mut BufArena<S>,
        name: &str,
        c_max: usize,
        seed: u64,
    ) -> Self {
        let bt1 = UsConv::new(params, bufs, &format!("{name}.bt1"), c_max, c_max, 3, 1, seed);
        let bt2 = UsConv::new(params, bufs, &format!("{name}.bt2"), c_max, c_max, 3, 1, seed);
        Bottleneck { bt1, bt2 }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &ParamArena<S>,
        bufs: &mut BufArena<S>,
        x: &Array4<S>,
        cw: usize,
        mode: BnMode,
    ) -> (Array4<S>, BottleneckCache<S>) {
        assert_eq!(x.dim().1, cw, "residual unit needs matching input width");
        let (y1, c1) = self.bt1.forward(params, bufs, x, cw, mode);
        let (y2, c2) = self.bt2.forward(params, bufs, &y1, cw, mode);
        (x + &y2, BottleneckCache { c1, c2 })
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamArena<S>,
        touched: &mut TouchedSet,
        gout: &Array4<S>,
        cache: &BottleneckCache<S>,
    ) -> Array4<S> {
        let g2 = self.bt2.backward(params, touched, gout, &cache.c2);
        let g1 = self.bt1.backward(params, touched, &g2, &cache.c1);
        gout + &g1
    }
}
