//! Adapter-branch stem: three elastic 3×3 convolutions with strides
//! (2, 2, 1), taking the input map to quarter resolution. Each
//! convolution has its own width choice over a shared base width.

use ndarray::Array4;

use super::arena::{BufArena, ParamArena, TouchedSet};
use super::layers::{UsConv, UsConvCache};
use super::{BnMode, NnError, Scalar};

#[derive(Debug, Clone)]
pub struct Stem {
    pub conv1: UsConv,
    pub conv2: UsConv,
    pub conv3: UsConv,
}

pub struct StemCache<S: Scalar> {
    c1: UsConvCache<S>,
    c2: UsConvCache<S>,
    c3: UsConvCache<S>,
}

impl Stem {
    pub fn new<S: Scalar>(
        params: &mut ParamArena<S>,
        bufs: &mut BufArena<S>,
        name: &str,
        in_ch: usize,
        caps: [usize; 3],
        seed: u64,
    ) -> Self {
        let conv1 = UsConv::new(params, bufs, &format!("{name}.conv1"), in_ch, caps[0], 3, 2, seed);
        let conv2 = UsConv::new(params, bufs, &format!("{name}.conv2"), caps[0], caps[1], 3, 2, seed);
        let conv3 = UsConv::new(params, bufs, &format!("{name}.conv3"), caps[1], caps[2], 3, 1, seed);
        Stem { conv1, conv2, conv3 }
    }

    /// Forward to quarter resolution. `widths` are the realized output
    /// channels of the three convolutions.
    pub fn forward<S: Scalar>(
        &self,
        params: &ParamArena<S>,
        bufs: &mut BufArena<S>,
        x: &Array4<S>,
        widths: [usize; 3],
        mode: BnMode,
    ) -> Result<(Array4<S>, StemCache<S>), NnError> {
        let (_, _, h, w) = x.dim();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(NnError::StemInputNotDivisible { h, w });
        }
        let (y1, c1) = self.conv1.forward(params, bufs, x, widths[0], mode);
        let (y2, c2) = self.conv2.forward(params, bufs, &y1, widths[1], mode);
        let (y3, c3) = self.conv3.forward(params, bufs, &y2, widths[2], mode);
        Ok((y3, StemCache { c1, c2, c3 }))
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamArena<S>,
        touched: &mut TouchedSet,
        gout: &Array4<S>,
        cache: &StemCache<S>,
    ) -> Array4<S> {
        let g3 = self.conv3.backward(params, touched, gout, &cache.c3);
        let g2 = self.conv2.backward(params, touched, &g3, &cache.c2);
        self.conv1.backward(params, touched, &g2, &cache.c1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_rng;
    use rand::Rng;

    #[test]
    fn stem_reaches_quarter_resolution_with_late_stride_one() {
        let mut p: ParamArena<f32> = ParamArena::new();
        let mut b: BufArena<f32> = BufArena::new();
        let stem = Stem::new(&mut p, &mut b, "stem", 3, [32, 16, 32], 11);
        let mut rng = param_rng(13, "stem");
        let x = Array4::from_shape_fn((2, 3, 64, 48), |_| rng.random_range(-1.0f32..1.0));
        let (y, _) = stem
            .forward(&p, &mut b, &x, [16, 8, 24], BnMode::Train { momentum: 0.1 })
            .unwrap();
        assert_eq!(y.dim(), (2, 24, 16, 12));

        // stride pattern (2, 2, 1): the intermediate maps already sit at H/4
        let (y1, _) = stem.conv1.forward(&p, &mut b, &x, 16, BnMode::Eval);
        assert_eq!(y1.dim(), (2, 16, 32, 24));
        let (y2, _) = stem.conv2.forward(&p, &mut b, &y1, 8, BnMode::Eval);
        assert_eq!(y2.dim(), (2, 8, 16, 12));
    }

    #[test]
    fn input_not_divisible_by_four_is_rejected() {
        let mut p: ParamArena<f32> = ParamArena::new();
        let mut b: BufArena<f32> = BufArena::new();
        let stem = Stem::new(&mut p, &mut b, "stem", 1, [8, 8, 8], 11);
        let x = Array4::<f32>::zeros((1, 1, 10, 8));
        let err = match stem.forward(&p, &mut b, &x, [4, 4, 4], BnMode::Eval) {
            Err(e) => e,
            Ok(_) => panic!("10x8 input must be rejected"),
        };
        assert!(err.to_string().contains("10x8"));
        let x = Array4::<f32>::zeros((1, 1, 8, 6));
        assert!(stem.forward(&p, &mut b, &x, [4, 4, 4], BnMode::Eval).is_err());
    }

    #[test]
    fn stem_gradients_flow_to_input() {
        let mut rng = param_rng(70, "stem-grad");
        let mut p: ParamArena<f64> = ParamArena::new();
        let mut b: BufArena<f64> = BufArena::new();
        let stem = Stem::new(&mut p, &mut b, "stem", 2, [8, 8, 8], 11);
        let widths = [6, 4, 8];
        let x = Array4::from_shape_fn((1, 2, 8, 8), |_| rng.random_range(-1.0..1.0));
        let gout = Array4::from_shape_fn((1, 8, 2, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |p: &ParamArena<f64>, x: &Array4<f64>| -> f64 {
            let mut bb = b.clone();
            let (y, _) =
                stem.forward(p, &mut bb, x, widths, BnMode::Train { momentum: 0.1 }).unwrap();
            y.iter().zip(gout.iter()).map(|(a, g)| a * g).sum()
        };
        let mut bb = b.clone();
        let (_, cache) =
            stem.forward(&p, &mut bb, &x, widths, BnMode::Train { momentum: 0.1 }).unwrap();
        let mut touched = TouchedSet::new();
        let dx = stem.backward(&mut p, &mut touched, &gout, &cache);
        let step = 1e-5;
        let probe = [0usize, 1, 3, 5];
        let mut xm = x.clone();
        let orig = xm[probe];
        xm[probe] = orig + step;
        let up = loss(&p, &xm);
        xm[probe] = orig - step;
        let dn = loss(&p, &xm);
        let num = (up - dn) / (2.0 * step);
        assert!((num - dx[probe]).abs() / num.abs().max(1.0) < 1e-5);
        // all three convolutions accumulated gradient
        assert!(touched.get(stem.conv1.conv.weight).is_some());
        assert!(touched.get(stem.conv2.conv.weight).is_some());
        assert!(touched.get(stem.conv3.conv.weight).is_some());
    }
}
