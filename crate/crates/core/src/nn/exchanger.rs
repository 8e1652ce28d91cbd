//! Exchanger module: fuse the auxiliary stream into the primary one, run
//! coordinate attention over the fused map, and add it back through a
//! zero-initialized scalar — so a freshly built exchanger is an exact
//! identity on the primary stream.

use ndarray::Array4;

use super::arena::{ParamArena, ParamId, TouchedSet};
use super::attention::{CoordAtt, CoordAttCache};
use super::fusion::{Fusion, FusionCache, FusionOption};
use super::{Scalar, zeros};

#[derive(Debug, Clone)]
pub struct Exchanger {
    pub fusion: Fusion,
    pub ca: CoordAtt,
    pub alpha: ParamId,
}

pub struct ExchangerCache<S: Scalar> {
    att: Array4<S>,
    alpha_v: S,
    fusion: FusionCache<S>,
    ca: CoordAttCache<S>,
}

impl Exchanger {
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
        let fusion = Fusion::new(
            params,
            &format!("{name}.fusion"),
            ca_max,
            cp_max,
            with_gamma,
            with_lambda,
            seed,
        );
        let ca = CoordAtt::new(params, &format!("{name}.ca"), cp_max, seed);
        let alpha = params.add(format!("{name}.alpha"), zeros(&[1]));
        Exchanger { fusion, ca, alpha }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &ParamArena<S>,
        primary: &Array4<S>,
        aux: &Array4<S>,
        option: FusionOption,
    ) -> (Array4<S>, ExchangerCache<S>) {
        let (fused, fc) = self.fusion.forward(params, primary, aux, option);
        let (att, ac) = self.ca.forward(params, &fused);
        let alpha_v = params.value(self.alpha)[[0]];
        let out = primary + &att.mapv(|v| v * alpha_v);
        (out, ExchangerCache { att, alpha_v, fusion: fc, ca: ac })
    }

    /// Returns `(dprimary, daux)`.
    pub fn backward<S: Scalar>(
        &self,
        params: &mut ParamArena<S>,
        touched: &mut TouchedSet,
        gout: &Array4<S>,
        cache: &ExchangerCache<S>,
    ) -> (Array4<S>, Array4<S>) {
        let dalpha: S = gout
            .iter()
            .zip(cache.att.iter())
            .fold(S::zero(), |acc, (&g, &a)| acc + g * a);
        params.grad_mut(self.alpha)[[0]] = params.grad_mut(self.alpha)[[0]] + dalpha;
        touched.mark(self.alpha, &[1]);

        let datt = gout.mapv(|v| v * cache.alpha_v);
        let dfused = self.ca.backward(params, touched, &datt, &cache.ca);
        let (dp_f, daux) = self.fusion.backward(params, touched, &dfused, &cache.fusion);
        (gout + &dp_f, daux)
    }
}
