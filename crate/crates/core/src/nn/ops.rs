//! Tensor primitives with explicit forwards and backwards. Activations are
//! `[N, C, H, W]` in standard layout throughout; channel elasticity slices
//! parameters, never activations, so inputs always carry exactly their
//! realized channel count.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, ArrayViewD, Ix1, Ix4, s};

use super::{BnMode, Scalar};

pub const BN_EPS: f64 = 1e-5;

/// Output spatial size of a convolution: floor((d + 2p − k)/s) + 1.
pub fn conv_out_hw(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1)
}

/// Unfold `x` into a `[c·k·k, n·ho·wo]` patch matrix.
pub fn im2col<S: Scalar>(x: &Array4<S>, k: usize, stride: usize, pad: usize) -> Array2<S> {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = conv_out_hw(h, w, k, stride, pad);
    let how = ho * wo;
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::<S>::zeros((c * k * k, n * how));
    {
        let cs = cols.as_slice_mut().expect("freshly allocated");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let row_base = row * n * how;
                    for ni in 0..n {
                        let x_base = (ni * c + ci) * h * w;
                        let out_base = row_base + ni * how;
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = x_base + iy as usize * w;
                            let o_row = out_base + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                cs[o_row + ox] = xs[x_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: fold a patch-matrix gradient back onto the input
/// grid, accumulating where patches overlap.
pub fn col2im<S: Scalar>(
    dcols: &Array2<S>,
    x_dims: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<S> {
    let (n, c, h, w) = x_dims;
    let (ho, wo) = conv_out_hw(h, w, k, stride, pad);
    let how = ho * wo;
    let mut dx = Array4::<S>::zeros((n, c, h, w));
    let ds = dcols.as_slice().expect("standard layout");
    {
        let dvs = dx.as_slice_mut().expect("freshly allocated");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let row_base = row * n * how;
                    for ni in 0..n {
                        let x_base = (ni * c + ci) * h * w;
                        let in_base = row_base + ni * how;
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = x_base + iy as usize * w;
                            let i_row = in_base + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dvs[x_row + ix as usize] =
                                    dvs[x_row + ix as usize] + ds[i_row + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// State kept by [`conv2d_forward`] for the backward pass. Holds the packed
/// realized weight so the backward needs no further arena reads.
pub struct ConvCache<S: Scalar> {
    cols: Array2<S>,
    w2d: Array2<S>,
    x_dims: (usize, usize, usize, usize),
    out_hw: (usize, usize),
    pub co: usize,
    pub ci: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

/// Gradients produced by [`conv2d_backward`]. `dw` is the packed
/// `[co, ci·k·k]` realized-slice gradient.
pub struct ConvGrads<S: Scalar> {
    pub dx: Array4<S>,
    pub dw: Array2<S>,
    pub dbias: Vec<S>,
}

/// Pack the `[0:co, 0:ci]` slice of a stored `[Co_max, Ci_max, k, k]`
/// weight into a contiguous `[co, ci·k·k]` matrix.
fn pack_weight<S: Scalar>(weight: &ArrayD<S>, co: usize, ci: usize, k: usize) -> Array2<S> {
    let w4 = weight.view().into_dimensionality::<Ix4>().expect("conv weight is 4-D");
    let sliced = w4.slice(s![0..co, 0..ci, .., ..]);
    let mut packed = Array2::<S>::zeros((co, ci * k * k));
    for (dst, src) in packed.iter_mut().zip(sliced.iter()) {
        *dst = *src;
    }
    packed
}

/// Convolution over the realized `[0:co, 0:ci]` parameter slice.
/// `x` must carry exactly `ci` channels.
pub fn conv2d_forward<S: Scalar>(
    x: &Array4<S>,
    weight: &ArrayD<S>,
    bias: &ArrayD<S>,
    co: usize,
    stride: usize,
    pad: usize,
) -> (Array4<S>, ConvCache<S>) {
    let (n, ci, h, w) = x.dim();
    let k = weight.shape()[2];
    debug_assert!(co <= weight.shape()[0] && ci <= weight.shape()[1]);
    let (ho, wo) = conv_out_hw(h, w, k, stride, pad);
    let how = ho * wo;

    let cols = im2col(x, k, stride, pad);
    let w2d = pack_weight(weight, co, ci, k);
    let mut out2d = Array2::<S>::zeros((co, n * how));
    general_mat_mul(S::one(), &w2d, &cols, S::zero(), &mut out2d);

    let bias = bias.view().into_dimensionality::<Ix1>().expect("bias is 1-D");
    let mut out = Array4::<S>::zeros((n, co, ho, wo));
    {
        let os = out.as_slice_mut().expect("freshly allocated");
        let o2 = out2d.as_slice().expect("standard layout");
        for c in 0..co {
            let b = bias[c];
            for ni in 0..n {
                let src = c * n * how + ni * how;
                let dst = (ni * co + c) * how;
                for i in 0..how {
                    os[dst + i] = o2[src + i] + b;
                }
            }
        }
    }
    let cache =
        ConvCache { cols, w2d, x_dims: (n, ci, h, w), out_hw: (ho, wo), co, ci, k, stride, pad };
    (out, cache)
}

/// Backward of [`conv2d_forward`]: input gradient plus packed weight/bias
/// gradients for the realized slice.
pub fn conv2d_backward<S: Scalar>(gout: &Array4<S>, cache: &ConvCache<S>) -> ConvGrads<S> {
    let (n, _ci, _h, _w) = cache.x_dims;
    let (ho, wo) = cache.out_hw;
    let how = ho * wo;
    let (co, ci, k) = (cache.co, cache.ci, cache.k);

    // regroup [N, co, ho, wo] -> [co, n*how]
    let mut g2d = Array2::<S>::zeros((co, n * how));
    {
        let gs = gout.as_slice().expect("standard layout");
        let g2 = g2d.as_slice_mut().expect("freshly allocated");
        for c in 0..co {
            for ni in 0..n {
                let src = (ni * co + c) * how;
                let dst = c * n * how + ni * how;
                g2[dst..dst + how].copy_from_slice(&gs[src..src + how]);
            }
        }
    }

    let mut dbias = vec![S::zero(); co];
    for c in 0..co {
        let mut acc = S::zero();
        for &v in g2d.row(c) {
            acc = acc + v;
        }
        dbias[c] = acc;
    }

    let mut dw = Array2::<S>::zeros((co, ci * k * k));
    general_mat_mul(S::one(), &g2d, &cache.cols.t(), S::zero(), &mut dw);

    let mut dcols = Array2::<S>::zeros((ci * k * k, n * how));
    general_mat_mul(S::one(), &cache.w2d.t(), &g2d, S::zero(), &mut dcols);
    let dx = col2im(&dcols, cache.x_dims, k, cache.stride, cache.pad);
    ConvGrads { dx, dw, dbias }
}

/// State kept by a train-mode batch-norm forward, including the realized
/// scale slice so the backward needs no further arena reads.
pub struct BnCache<S: Scalar> {
    xhat: Array4<S>,
    inv_std: Vec<S>,
    scale: Vec<S>,
}

/// Gradients produced by [`bn_backward`] for the realized `[0:c]` slice.
pub struct BnGrads<S: Scalar> {
    pub dx: Array4<S>,
    pub dscale: Vec<S>,
    pub dshift: Vec<S>,
}

/// Batch normalization over the `[0:c]` parameter/statistic slices.
///
/// Train and recalibration modes normalize by biased batch statistics and
/// fold them into the running estimates (EMA and cumulative mean
/// respectively); eval mode normalizes by the stored running statistics.
/// Only train mode returns a backward cache.
pub fn bn_forward<S: Scalar>(
    x: &Array4<S>,
    scale: &ArrayD<S>,
    shift: &ArrayD<S>,
    running_mean: &mut ArrayD<S>,
    running_var: &mut ArrayD<S>,
    mode: BnMode,
) -> (Array4<S>, Option<BnCache<S>>) {
    let (n, c, h, w) = x.dim();
    let m = n * h * w;
    let scale = scale.view().into_dimensionality::<Ix1>().expect("scale is 1-D");
    let shift = shift.view().into_dimensionality::<Ix1>().expect("shift is 1-D");
    let mut rmean = running_mean.view_mut().into_dimensionality::<Ix1>().expect("1-D");
    let mut rvar = running_var.view_mut().into_dimensionality::<Ix1>().expect("1-D");

    let use_batch_stats = !matches!(mode, BnMode::Eval);
    let (mean, var): (Vec<S>, Vec<S>) = if use_batch_stats {
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        let inv_m = S::from_f64(1.0 / m as f64);
        for ch in 0..c {
            let mut acc = S::zero();
            for ni in 0..n {
                for v in x.slice(s![ni, ch, .., ..]).iter() {
                    acc = acc + *v;
                }
            }
            let mu = acc * inv_m;
            let mut vacc = S::zero();
            for ni in 0..n {
                for v in x.slice(s![ni, ch, .., ..]).iter() {
                    let d = *v - mu;
                    vacc = vacc + d * d;
                }
            }
            mean[ch] = mu;
            var[ch] = vacc * inv_m;
        }
        match mode {
            BnMode::Train { momentum } => {
                let mom = S::from_f64(momentum);
                let keep = S::from_f64(1.0 - momentum);
                for ch in 0..c {
                    rmean[ch] = keep * rmean[ch] + mom * mean[ch];
                    rvar[ch] = keep * rvar[ch] + mom * var[ch];
                }
            }
            BnMode::Recalib { step } => {
                let prev = S::from_f64(step as f64);
                let inv = S::from_f64(1.0 / (step as f64 + 1.0));
                for ch in 0..c {
                    rmean[ch] = (prev * rmean[ch] + mean[ch]) * inv;
                    rvar[ch] = (prev * rvar[ch] + var[ch]) * inv;
                }
            }
            BnMode::Eval => unreachable!(),
        }
        (mean, var)
    } else {
        ((0..c).map(|ch| rmean[ch]).collect(), (0..c).map(|ch| rvar[ch]).collect())
    };

    let eps = S::from_f64(BN_EPS);
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut xhat = Array4::<S>::zeros((n, c, h, w));
    let mut out = Array4::<S>::zeros((n, c, h, w));
    {
        let xs = x.as_slice().expect("standard layout");
        let xh = xhat.as_slice_mut().expect("freshly allocated");
        let os = out.as_slice_mut().expect("freshly allocated");
        let hw = h * w;
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * hw;
                let (mu, istd, g, b) = (mean[ch], inv_std[ch], scale[ch], shift[ch]);
                for i in base..base + hw {
                    let z = (xs[i] - mu) * istd;
                    xh[i] = z;
                    os[i] = g * z + b;
                }
            }
        }
    }
    let cache = if matches!(mode, BnMode::Train { .. }) {
        let scale_slice: Vec<S> = (0..c).map(|ch| scale[ch]).collect();
        Some(BnCache { xhat, inv_std, scale: scale_slice })
    } else {
        None
    };
    (out, cache)
}

/// Backward of a train-mode [`bn_forward`].
pub fn bn_backward<S: Scalar>(gout: &Array4<S>, cache: &BnCache<S>) -> BnGrads<S> {
    let (n, c, h, w) = cache.xhat.dim();
    let m = n * h * w;
    let hw = h * w;
    let mut dscale = vec![S::zero(); c];
    let mut dshift = vec![S::zero(); c];

    let gs = gout.as_slice().expect("standard layout");
    let xh = cache.xhat.as_slice().expect("standard layout");
    let mut dx = Array4::<S>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().expect("freshly allocated");
    let inv_m = S::from_f64(1.0 / m as f64);

    for ch in 0..c {
        // per-channel reductions in fixed (n, spatial) order
        let mut sum_g = S::zero();
        let mut sum_gx = S::zero();
        for ni in 0..n {
            let base = (ni * c + ch) * hw;
            for i in base..base + hw {
                sum_g = sum_g + gs[i];
                sum_gx = sum_gx + gs[i] * xh[i];
            }
        }
        dscale[ch] = sum_gx;
        dshift[ch] = sum_g;
        let k = cache.scale[ch] * cache.inv_std[ch];
        let mean_g = sum_g * inv_m;
        let mean_gx = sum_gx * inv_m;
        for ni in 0..n {
            let base = (ni * c + ch) * hw;
            for i in base..base + hw {
                dxs[i] = k * (gs[i] - mean_g - xh[i] * mean_gx);
            }
        }
    }
    BnGrads { dx, dscale, dshift }
}

/// Numerically stable logistic function.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable softplus ln(1 + e^x) = max(x, 0) + ln1p(e^{−|x|}).
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

/// y = x · σ(x), applied elementwise; the input is the backward cache.
pub fn silu_forward<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    x.mapv(|v| v * sigmoid(v))
}

/// dL/dx for y = x·σ(x): σ(x)·(1 + x·(1 − σ(x))).
pub fn silu_backward<S: Scalar>(gout: &Array4<S>, x: &Array4<S>) -> Array4<S> {
    let mut dx = gout.clone();
    for (d, &v) in dx.iter_mut().zip(x.iter()) {
        let s = sigmoid(v);
        *d = *d * s * (S::one() + v * (S::one() - s));
    }
    dx
}

/// Bilinear resample with half-pixel-center alignment; identity when the
/// size is unchanged.
pub fn bilinear_resize<S: Scalar>(x: &Array4<S>, out_h: usize, out_w: usize) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let mut out = Array4::<S>::zeros((n, c, out_h, out_w));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = S::from_f64(fy - y0 as f64);
        for xo in 0..out_w {
            let fx = ((xo as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = S::from_f64(fx - x0 as f64);
            for ni in 0..n {
                for ch in 0..c {
                    let top = x[[ni, ch, y0, x0]] * (S::one() - tx) + x[[ni, ch, y0, x1]] * tx;
                    let bot = x[[ni, ch, y1, x0]] * (S::one() - tx) + x[[ni, ch, y1, x1]] * tx;
                    out[[ni, ch, y, xo]] = top * (S::one() - ty) + bot * ty;
                }
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`]: scatter the output gradient back with
/// the same interpolation weights.
pub fn bilinear_resize_backward<S: Scalar>(
    gout: &Array4<S>,
    in_h: usize,
    in_w: usize,
) -> Array4<S> {
    let (n, c, out_h, out_w) = gout.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return gout.clone();
    }
    let mut dx = Array4::<S>::zeros((n, c, in_h, in_w));
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let ty = S::from_f64(fy - y0 as f64);
        for xo in 0..out_w {
            let fx = ((xo as f64 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let tx = S::from_f64(fx - x0 as f64);
            for ni in 0..n {
                for ch in 0..c {
                    let g = gout[[ni, ch, y, xo]];
                    dx[[ni, ch, y0, x0]] =
                        dx[[ni, ch, y0, x0]] + g * (S::one() - ty) * (S::one() - tx);
                    dx[[ni, ch, y0, x1]] = dx[[ni, ch, y0, x1]] + g * (S::one() - ty) * tx;
                    dx[[ni, ch, y1, x0]] = dx[[ni, ch, y1, x0]] + g * ty * (S::one() - tx);
                    dx[[ni, ch, y1, x1]] = dx[[ni, ch, y1, x1]] + g * ty * tx;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbor 2× upsample.
pub fn upsample2x<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::<S>::zeros((n, c, 2 * h, 2 * w));
    for ni in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xo in 0..w {
                    let v = x[[ni, ch, y, xo]];
                    out[[ni, ch, 2 * y, 2 * xo]] = v;
                    out[[ni, ch, 2 * y, 2 * xo + 1]] = v;
                    out[[ni, ch, 2 * y + 1, 2 * xo]] = v;
                    out[[ni, ch, 2 * y + 1, 2 * xo + 1]] = v;
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: sum each 2×2 block.
pub fn upsample2x_backward<S: Scalar>(gout: &Array4<S>) -> Array4<S> {
    let (n, c, h2, w2) = gout.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::<S>::zeros((n, c, h, w));
    for ni in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xo in 0..w {
                    dx[[ni, ch, y, xo]] = gout[[ni, ch, 2 * y, 2 * xo]]
                        + gout[[ni, ch, 2 * y, 2 * xo + 1]]
                        + gout[[ni, ch, 2 * y + 1, 2 * xo]]
                        + gout[[ni, ch, 2 * y + 1, 2 * xo + 1]];
                }
            }
        }
    }
    dx
}

/// Global average pool over H and W → `[N, C]`.
pub fn gap_hw<S: Scalar>(x: &Array4<S>) -> Array2<S> {
    let (n, c, h, w) = x.dim();
    let inv = S::from_f64(1.0 / (h * w) as f64);
    let mut out = Array2::<S>::zeros((n, c));
    for ni in 0..n {
        for ch in 0..c {
            let mut acc = S::zero();
            for v in x.slice(s![ni, ch, .., ..]).iter() {
                acc = acc + *v;
            }
            out[[ni, ch]] = acc * inv;
        }
    }
    out
}

/// Adjoint of [`gap_hw`].
pub fn gap_hw_backward<S: Scalar>(g: &Array2<S>, h: usize, w: usize) -> Array4<S> {
    let (n, c) = g.dim();
    let inv = S::from_f64(1.0 / (h * w) as f64);
    let mut dx = Array4::<S>::zeros((n, c, h, w));
    for ni in 0..n {
        for ch in 0..c {
            let v = g[[ni, ch]] * inv;
            dx.slice_mut(s![ni, ch, .., ..]).fill(v);
        }
    }
    dx
}

/// Mean over the W axis → `[N, C, H, 1]`.
pub fn pool_w<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    let inv = S::from_f64(1.0 / w as f64);
    let mut out = Array4::<S>::zeros((n, c, h, 1));
    for ni in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let mut acc = S::zero();
                for xo in 0..w {
                    acc = acc + x[[ni, ch, y, xo]];
                }
                out[[ni, ch, y, 0]] = acc * inv;
            }
        }
    }
    out
}

pub fn pool_w_backward<S: Scalar>(g: &Array4<S>, w: usize) -> Array4<S> {
    let (n, c, h, _) = g.dim();
    let inv = S::from_f64(1.0 / w as f64);
    let mut dx = Array4::<S>::zeros((n, c, h, w));
    for ni in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let v = g[[ni, ch, y, 0]] * inv;
                for xo in 0..w {
                    dx[[ni, ch, y, xo]] = v;
                }
            }
        }
    }
    dx
}

/// Mean over the H axis → `[N, C, 1, W]`.
pub fn pool_h<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    let inv = S::from_f64(1.0 / h as f64);
    let mut out = Array4::<S>::zeros((n, c, 1, w));
    for ni in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xo in 0..w {
                    out[[ni, ch, 0, xo]] = out[[ni, ch, 0, xo]] + x[[ni, ch, y, xo]];
                }
            }
            for xo in 0..w {
                out[[ni, ch, 0, xo]] = out[[ni, ch, 0, xo]] * inv;
            }
        }
    }
    out
}

pub fn pool_h_backward<S: Scalar>(g: &Array4<S>, h: usize) -> Array4<S> {
    let (n, c, _, w) = g.dim();
    let inv = S::from_f64(1.0 / h as f64);
    let mut dx = Array4::<S>::zeros((n, c, h, w));
    for ni in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xo in 0..w {
                    dx[[ni, ch, y, xo]] = g[[ni, ch, 0, xo]] * inv;
                }
            }
        }
    }
    dx
}

/// Max-abs difference between two tensors of equal shape.
pub fn max_abs_diff<S: Scalar>(a: &ArrayViewD<S>, b: &ArrayViewD<S>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs().to_f64())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_uniform, param_rng, zeros};
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn rand4(rng: &mut rand_chacha::ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct convolution oracle, written from the definition.
    fn conv_naive(
        x: &Array4<f64>,
        w: &ArrayD<f64>,
        b: &ArrayD<f64>,
        co: usize,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (n, ci, h, ww) = x.dim();
        let k = w.shape()[2];
        let (ho, wo) = conv_out_hw(h, ww, k, stride, pad);
        let mut out = Array4::<f64>::zeros((n, co, ho, wo));
        for ni in 0..n {
            for c in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[[c]];
                        for cc in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < ww
                                    {
                                        acc += x[[ni, cc, iy as usize, ix as usize]]
                                            * w[[c, cc, ky, kx]];
                                    }
                                }
                            }
                        }
                        out[[ni, c, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = param_rng(99, "conv-test");
        for &(k, stride, pad) in &[(3usize, 1usize, 1usize), (3, 2, 1), (1, 1, 0)] {
            let (n, ci_max, co_max, h, w) = (2, 5, 6, 7, 9);
            let weight: ArrayD<f64> =
                init_uniform(&mut rng, &[co_max, ci_max, k, k], ci_max * k * k);
            let bias: ArrayD<f64> = init_uniform(&mut rng, &[co_max], co_max);
            for &(co, ci) in &[(co_max, ci_max), (3, 2), (1, 1)] {
                let x = rand4(&mut rng, (n, ci, h, w));
                let (got, _) = conv2d_forward(&x, &weight, &bias, co, stride, pad);
                // oracle sees only the sliced copies
                let ws = weight
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap()
                    .slice(s![0..co, 0..ci, .., ..])
                    .to_owned()
                    .into_dyn();
                let want = conv_naive(&x, &ws, &bias, co, stride, pad);
                assert!(
                    max_abs_diff(&got.view().into_dyn(), &want.view().into_dyn()) < 1e-12,
                    "k={k} s={stride} co={co} ci={ci}"
                );
            }
        }
    }

    /// Central finite difference of a scalar-valued closure.
    fn fd<F: FnMut(f64) -> f64>(mut f: F, x0: f64, step: f64) -> f64 {
        (f(x0 + step) - f(x0 - step)) / (2.0 * step)
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = param_rng(41, "conv-grad");
        let (n, ci, co, h, w, k, stride, pad) = (2, 3, 4, 5, 5, 3, 2, 1);
        let mut weight: ArrayD<f64> = init_uniform(&mut rng, &[co, ci, k, k], ci * k * k);
        let mut bias: ArrayD<f64> = init_uniform(&mut rng, &[co], co);
        let mut x = rand4(&mut rng, (n, ci, h, w));
        // fixed random cotangent defines the scalar loss L = <gout, y>
        let gout = rand4(&mut rng, {
            let (ho, wo) = conv_out_hw(h, w, k, stride, pad);
            (n, co, ho, wo)
        });
        let loss = |x: &Array4<f64>, wt: &ArrayD<f64>, bs: &ArrayD<f64>| -> f64 {
            let (y, _) = conv2d_forward(x, wt, bs, co, stride, pad);
            y.iter().zip(gout.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = conv2d_forward(&x, &weight, &bias, co, stride, pad);
        let grads = conv2d_backward(&gout, &cache);
        let dx = grads.dx;
        let wg =
            grads.dw.into_shape_with_order((co, ci, k, k)).unwrap().into_dyn();
        let bg = grads.dbias;

        let step = 1e-5;
        for probe in [(0usize, 0usize, 0usize, 0usize), (3, 2, 1, 1), (1, 0, 2, 2)] {
            let orig = weight[[probe.0, probe.1, probe.2, probe.3]];
            let num = fd(
                |v| {
                    weight[[probe.0, probe.1, probe.2, probe.3]] = v;
                    let l = loss(&x, &weight, &bias);
                    weight[[probe.0, probe.1, probe.2, probe.3]] = orig;
                    l
                },
                orig,
                step,
            );
            let ana = wg[[probe.0, probe.1, probe.2, probe.3]];
            assert!((num - ana).abs() / num.abs().max(1.0) < 1e-6, "dW {probe:?}: {num} vs {ana}");
        }
        {
            let orig = bias[[1]];
            let num = fd(
                |v| {
                    bias[[1]] = v;
                    let l = loss(&x, &weight, &bias);
                    bias[[1]] = orig;
                    l
                },
                orig,
                step,
            );
            assert!((num - bg[1]).abs() / num.abs().max(1.0) < 1e-6);
        }
        for probe in [(0usize, 0usize, 0usize, 0usize), (1, 2, 4, 3)] {
            let orig = x[[probe.0, probe.1, probe.2, probe.3]];
            let num = fd(
                |v| {
                    x[[probe.0, probe.1, probe.2, probe.3]] = v;
                    let l = loss(&x, &weight, &bias);
                    x[[probe.0, probe.1, probe.2, probe.3]] = orig;
                    l
                },
                orig,
                step,
            );
            let ana = dx[[probe.0, probe.1, probe.2, probe.3]];
            assert!((num - ana).abs() / num.abs().max(1.0) < 1e-6, "dx {probe:?}");
        }
    }

    #[test]
    fn bn_train_normalizes_and_updates_running_stats() {
        let mut rng = param_rng(17, "bn");
        let x = rand4(&mut rng, (3, 2, 4, 4));
        let scale = ArrayD::from_elem(IxDyn(&[2]), 1.5);
        let shift = ArrayD::from_elem(IxDyn(&[2]), -0.25);
        let mut rmean = zeros::<f64>(&[2]);
        let mut rvar = ArrayD::from_elem(IxDyn(&[2]), 1.0);
        let (y, cache) =
            bn_forward(&x, &scale, &shift, &mut rmean, &mut rvar, BnMode::Train { momentum: 0.1 });
        assert!(cache.is_some());
        // per-channel mean of y ≈ shift, var ≈ scale² (biased, up to eps)
        for ch in 0..2 {
            let v: Vec<f64> = y.slice(s![.., ch, .., ..]).iter().copied().collect();
            let mu: f64 = v.iter().sum::<f64>() / v.len() as f64;
            let var: f64 = v.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / v.len() as f64;
            assert!((mu - -0.25).abs() < 1e-10);
            assert!((var - 2.25).abs() < 1e-3);
            // EMA moved 10% toward the batch stats
            let xi: Vec<f64> = x.slice(s![.., ch, .., ..]).iter().copied().collect();
            let bmu: f64 = xi.iter().sum::<f64>() / xi.len() as f64;
            assert!((rmean[[ch]] - 0.1 * bmu).abs() < 1e-12);
        }
    }

    #[test]
    fn bn_recalib_is_cumulative_mean() {
        let mut rng = param_rng(18, "bn-recalib");
        let a = rand4(&mut rng, (2, 1, 3, 3));
        let b = rand4(&mut rng, (2, 1, 3, 3));
        let scale = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let shift = zeros::<f64>(&[1]);
        let mut rmean = ArrayD::from_elem(IxDyn(&[1]), 123.0); // stale value must vanish
        let mut rvar = ArrayD::from_elem(IxDyn(&[1]), 456.0);
        bn_forward(&a, &scale, &shift, &mut rmean, &mut rvar, BnMode::Recalib { step: 0 });
        bn_forward(&b, &scale, &shift, &mut rmean, &mut rvar, BnMode::Recalib { step: 1 });
        let stat = |x: &Array4<f64>| {
            let v: Vec<f64> = x.iter().copied().collect();
            let mu: f64 = v.iter().sum::<f64>() / v.len() as f64;
            let var: f64 = v.iter().map(|t| (t - mu).powi(2)).sum::<f64>() / v.len() as f64;
            (mu, var)
        };
        let (ma, va) = stat(&a);
        let (mb, vb) = stat(&b);
        assert!((rmean[[0]] - 0.5 * (ma + mb)).abs() < 1e-12);
        assert!((rvar[[0]] - 0.5 * (va + vb)).abs() < 1e-12);
    }

    #[test]
    fn bn_backward_matches_finite_differences() {
        let mut rng = param_rng(19, "bn-grad");
        let mut x = rand4(&mut rng, (2, 2, 3, 3));
        let mut scale = ArrayD::from_shape_fn(IxDyn(&[2]), |_| rng.random_range(0.5..1.5));
        let mut shift = ArrayD::from_shape_fn(IxDyn(&[2]), |_| rng.random_range(-0.5..0.5));
        let gout = rand4(&mut rng, (2, 2, 3, 3));
        let loss = |x: &Array4<f64>, sc: &ArrayD<f64>, sh: &ArrayD<f64>| -> f64 {
            let mut rm = zeros::<f64>(&[2]);
            let mut rv = ArrayD::from_elem(IxDyn(&[2]), 1.0);
            let (y, _) = bn_forward(x, sc, sh, &mut rm, &mut rv, BnMode::Train { momentum: 0.1 });
            y.iter().zip(gout.iter()).map(|(a, b)| a * b).sum()
        };
        let mut rm = zeros::<f64>(&[2]);
        let mut rv = ArrayD::from_elem(IxDyn(&[2]), 1.0);
        let (_, cache) =
            bn_forward(&x, &scale, &shift, &mut rm, &mut rv, BnMode::Train { momentum: 0.1 });
        let cache = cache.unwrap();
        let grads = bn_backward(&gout, &cache);
        let (dx, sg, bg) = (grads.dx, grads.dscale, grads.dshift);

        let step = 1e-5;
        for probe in [(0usize, 0usize, 1usize, 2usize), (1, 1, 0, 0)] {
            let orig = x[[probe.0, probe.1, probe.2, probe.3]];
            let num = fd(
                |v| {
                    x[[probe.0, probe.1, probe.2, probe.3]] = v;
                    let l = loss(&x, &scale, &shift);
                    x[[probe.0, probe.1, probe.2, probe.3]] = orig;
                    l
                },
                orig,
                step,
            );
            let ana = dx[[probe.0, probe.1, probe.2, probe.3]];
            assert!((num - ana).abs() / num.abs().max(1.0) < 1e-5, "bn dx {probe:?}");
        }
        for ch in 0..2 {
            let orig = scale[[ch]];
            let num = fd(
                |v| {
                    scale[[ch]] = v;
                    let l = loss(&x, &scale, &shift);
                    scale[[ch]] = orig;
                    l
                },
                orig,
                step,
            );
            assert!((num - sg[ch]).abs() / num.abs().max(1.0) < 1e-6, "bn dscale {ch}");
            let orig = shift[[ch]];
            let num = fd(
                |v| {
                    shift[[ch]] = v;
                    let l = loss(&x, &scale, &shift);
                    shift[[ch]] = orig;
                    l
                },
                orig,
                step,
            );
            assert!((num - bg[ch]).abs() / num.abs().max(1.0) < 1e-6, "bn dshift {ch}");
        }
    }

    #[test]
    fn silu_softplus_derivatives() {
        for &v in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let x = Array4::from_elem((1, 1, 1, 1), v);
            let g = Array4::from_elem((1, 1, 1, 1), 1.0);
            let ana = silu_backward(&g, &x)[[0, 0, 0, 0]];
            let num = fd(|t| t * sigmoid(t), v, 1e-6);
            assert!((ana - num).abs() < 1e-8, "silu'({v})");
            let num_sp = fd(softplus::<f64>, v, 1e-6);
            assert!((sigmoid(v) - num_sp).abs() < 1e-8, "softplus'({v})");
        }
        // stability at extremes
        assert!(softplus(800.0f64).is_finite());
        assert!(softplus(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0 && sigmoid(-800.0f64) >= 0.0);
    }

    /// Linear ops satisfy <A x, y> == <x, Aᵀ y> for random x, y.
    #[test]
    fn linear_ops_satisfy_adjoint_identity() {
        let mut rng = param_rng(55, "adjoint");
        // bilinear up and down
        for &(h, w, oh, ow) in &[(4usize, 6usize, 9usize, 5usize), (8, 8, 4, 4), (3, 3, 3, 3)] {
            let x = rand4(&mut rng, (2, 3, h, w));
            let y = rand4(&mut rng, (2, 3, oh, ow));
            let ax = bilinear_resize(&x, oh, ow);
            let aty = bilinear_resize_backward(&y, h, w);
            let lhs: f64 = ax.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "bilinear {h}x{w}->{oh}x{ow}");
        }
        // nearest upsample
        let x = rand4(&mut rng, (1, 2, 3, 4));
        let y = rand4(&mut rng, (1, 2, 6, 8));
        let lhs: f64 = upsample2x(&x).iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 =
            x.iter().zip(upsample2x_backward(&y).iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // pools
        let x = rand4(&mut rng, (2, 2, 3, 5));
        let g2 = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = gap_hw(&x).iter().zip(g2.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 =
            x.iter().zip(gap_hw_backward(&g2, 3, 5).iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let gw = rand4(&mut rng, (2, 2, 3, 1));
        let lhs: f64 = pool_w(&x).iter().zip(gw.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(pool_w_backward(&gw, 5).iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let gh = rand4(&mut rng, (2, 2, 1, 5));
        let lhs: f64 = pool_h(&x).iter().zip(gh.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(pool_h_backward(&gh, 3).iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn output_size_arithmetic() {
        assert_eq!(conv_out_hw(64, 64, 3, 2, 1), (32, 32));
        assert_eq!(conv_out_hw(64, 64, 3, 1, 1), (64, 64));
        assert_eq!(conv_out_hw(16, 16, 1, 1, 0), (16, 16));
        assert_eq!(conv_out_hw(5, 7, 3, 2, 1), (3, 4));
    }
}
