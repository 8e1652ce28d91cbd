//! Coordinate attention: factorized axis descriptors gate the input along
//! height and width. Channel-elastic like every other block — the realized
//! bottleneck width follows the realized input channels. No normalization
//! inside: with all-zero parameters both gates sit at exactly 0.5.

use ndarray::{Array4, Axis, concatenate, s};

use super::arena::{ParamArena, TouchedSet};
use super::layers::PlainConv;
use super::ops::{ConvCache, sigmoid, silu_backward, silu_forward};
use super::Scalar;

/// Descriptor bottleneck width for a realized channel count: c/8, floored,
/// at least 1.
pub fn mid_channels(c: usize) -> usize {
    (c / 8).max(1)
}

#[derive(Debug, Clone)]
pub struct CoordAtt {
    pub conv1: PlainConv,
    pub conv_h: PlainConv,
    pub conv_w: PlainConv,
    pub c_max: usize,
}

pub struct CoordAttCache<S: Scalar> {
    x: Array4<S>,
    pub(crate) gh: Array4<S>,
    pub(crate) gw: Array4<S>,
    y1: Array4<S>,
    c1: ConvCache<S>,
    ch: ConvCache<S>,
    cw: ConvCache<S>,
}

impl CoordAtt {
    pub fn new<S: Scalar>(
        params: &mut ParamArena<S>,
        name: &str,
        c_max: usize,
        seed: u64,
    ) -> Self {
        let mid_max = mid_channels(c_max);
        let conv1 =
            PlainConv::new(params, &format!("{name}.conv1"), c_max, mid_max, 1, 1, 0, 0.0, seed);
        let conv_h =
            PlainConv::new(params, &format!("{name}.conv_h"), mid_max, c_max, 1, 1, 0, 0.0, seed);
        let conv_w =
            PlainConv::new(params, &format!("{name}.conv_w"), mid_max, c_max, 1, 1, 0, 0.0, seed);
        CoordAtt { conv1, conv_h, conv_w, c_max }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &ParamArena<S>,
        x: &Array4<S>,
    ) -> (Array4<S>, CoordAttCache<S>) {
        let (n, c, h, w) = x.dim();
        let mid = mid_channels(c);

        let ph = super::ops::pool_w(x); // [N,C,H,1]
        let pw = super::ops::pool_h(x); // [N,C,1,W]
        // [N,C,1,W] and [N,C,W,1] share a memory order; transposing is a reshape
        let pw_t = pw.into_shape_with_order((n, c, w, 1)).expect("same element count");
        let cat = concatenate(Axis(2), &[ph.view(), pw_t.view()]).expect("same N,C,1");
        let cat = cat.as_standard_layout().to_owned();

        let (y1, c1) = self.conv1.forward(params, &cat, mid); // [N,mid,H+W,1]
        let a1 = silu_forward(&y1);
        let yh = a1.slice(s![.., .., 0..h, ..]).to_owned();
        let yw = a1.slice(s![.., .., h..h + w, ..]).to_owned();

        let (zh, ch) = self.conv_h.forward(params, &yh, c); // [N,C,H,1]
        let (zw, cw) = self.conv_w.forward(params, &yw, c); // [N,C,W,1]
        let gh = zh.mapv(sigmoid);
        let gw = zw.mapv(sigmoid).into_shape_with_order((n, c, 1, w)).expect("same element count");

        let mut out = Array4::<S>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    let g_h = gh[[ni, ci, y, 0]];
                    for xo in 0..w {
                        out[[ni, ci, y, xo]] = x[[ni, ci, y, xo]] * g_h * gw[[ni, ci, 0, xo]];
                    }
                }
            }
        }
        (out, CoordAttCache { x: x.clone(), gh, gw, y1, c1, ch, cw })
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamArena<S>,
        touched: &mut TouchedSet,
        gout: &Array4<S>,
        cache: &CoordAttCache<S>,
    ) -> Array4<S> {
        let (n, c, h, w) = cache.x.dim();
        let (x, gh, gw) = (&cache.x, &cache.gh, &cache.gw);

        let mut dx = Array4::<S>::zeros((n, c, h, w));
        let mut dgh = Array4::<S>::zeros((n, c, h, 1));
        let mut dgw = Array4::<S>::zeros((n, c, 1, w));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    let g_h = gh[[ni, ci, y, 0]];
                    for xo in 0..w {
                        let g = gout[[ni, ci, y, xo]];
                        let g_w = gw[[ni, ci, 0, xo]];
                        let xv = x[[ni, ci, y, xo]];
                        dx[[ni, ci, y, xo]] = g * g_h * g_w;
                        dgh[[ni, ci, y, 0]] = dgh[[ni, ci, y, 0]] + g * xv * g_w;
                        dgw[[ni, ci, 0, xo]] = dgw[[ni, ci, 0, xo]] + g * xv * g_h;
                    }
                }
            }
        }

        // through the sigmoids
        let mut dzh = dgh;
        for (d, &g) in dzh.iter_mut().zip(gh.iter()) {
            *d = *d * g * (S::one() - g);
        }
        let mut dzw = dgw.into_shape_with_order((n, c, w, 1)).expect("same element count");
        let gw_t = gw.view().into_shape_with_order((n, c, w, 1)).expect("same element count");
        for (d, &g) in dzw.iter_mut().zip(gw_t.iter()) {
            *d = *d * g * (S::one() - g);
        }

        let dyh = self.conv_h.backward(params, touched, &dzh, &cache.ch);
        let dyw = self.conv_w.backward(params, touched, &dzw, &cache.cw);
        let da1 = concatenate(Axis(2), &[dyh.view(), dyw.view()]).expect("same N,mid,1");
        let da1 = da1.as_standard_layout().to_owned();
        let dy1 = silu_backward(&da1, &cache.y1);
        let dcat = self.conv1.backward(params, touched, &dy1, &cache.c1);

        let dph = dcat.slice(s![.., .., 0..h, ..]).to_owned();
        let dpw_t = dcat.slice(s![.., .., h..h + w, ..]).to_owned();
        let dpw = dpw_t.into_shape_with_order((n, c, 1, w)).expect("same element count");
        dx = dx + super::ops::pool_w_backward(&dph, w) + super::ops::pool_h_backward(&dpw, h);
        dx
    }
}
