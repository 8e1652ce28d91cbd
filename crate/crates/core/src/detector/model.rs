//! Model assembly, dual-branch forward, and the hand-written backward walk.
//!
//! The backbone stream runs stem-free through five stride-2 stages; the
//! adapter stream (stem output at H/4) is exchanged with it at the configured
//! sites. Mode-1 exchangers rewrite the backbone stream, mode-2 exchangers
//! rewrite the adapter stream; both leave the other side untouched, so the
//! reverse walk below can carry one gradient accumulator per stream.

use ndarray::{ArrayD, Axis, Slice};

use crate::detector::{
    DetectionOutput, DetectorError, ModelConfig, Realization, Routing, ScaleOut, Variant,
};
use crate::nn::exchanger::{Exchanger, ExchangerCache};
use crate::nn::layers::{Bottleneck, BottleneckCache, PlainConv, UsConv, UsConvCache};
use crate::nn::ops::{
    sigmoid, softplus, upsample2x, upsample2x_backward, ConvCache,
};
use crate::nn::stem::{Stem, StemCache};
use crate::nn::{BnMode, BufArena, ParamArena, Scalar, TouchedSet};
use ndarray::Array4;

/// Bias for class logits so a fresh model predicts ~1% foreground.
const CLS_BIAS_INIT: f64 = -4.59;

struct Stage {
    down: UsConv,
    unit: Bottleneck,
}

struct ExchangerSlot {
    ex: Exchanger,
    site: usize,
    mode: u8,
    /// First listed occurrence at a site runs before the stage, the rest after.
    pre: bool,
    /// Index in the configured layout; names stay stable across variants.
    seq: usize,
}

struct Neck {
    merge32: UsConv,
    top16: UsConv,
    lat16: UsConv,
    merge16: UsConv,
    top8: UsConv,
    lat8: UsConv,
    merge8: UsConv,
}

struct HeadScale {
    cls_stem: UsConv,
    reg_stem: UsConv,
    cls_pred: PlainConv,
    reg_pred: PlainConv,
}

pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    /// Capacity widths: the stored tensor extents. Equals the realized widths
    /// for a fixed model; the maxima for a supernet.
    pub caps: Realization,
    pub is_supernet: bool,
    pub seed: u64,
    pub params: ParamArena<S>,
    pub bufs: BufArena<S>,
    stem: Option<Stem>,
    stages: Vec<Stage>,
    exchangers: Vec<ExchangerSlot>,
    neck: Neck,
    head: Vec<HeadScale>,
}

struct StageTrace<S: Scalar> {
    down: UsConvCache<S>,
    unit: BottleneckCache<S>,
}

struct NeckTrace<S: Scalar> {
    merge32: UsConvCache<S>,
    top16: UsConvCache<S>,
    lat16: UsConvCache<S>,
    merge16: UsConvCache<S>,
    top8: UsConvCache<S>,
    lat8: UsConvCache<S>,
    merge8: UsConvCache<S>,
}

struct HeadTrace<S: Scalar> {
    cls_stem: UsConvCache<S>,
    cls_pred: ConvCache<S>,
    reg_stem: UsConvCache<S>,
    reg_pred: ConvCache<S>,
}

/// Everything a backward pass needs from the matching forward pass.
pub struct Trace<S: Scalar> {
    /// Realization the forward pass ran at; backward trusts the caller to
    /// pass the matching trace.
    pub r: Realization,
    stem: Option<StemCache<S>>,
    adapter_dim: Option<(usize, usize, usize, usize)>,
    stages: Vec<StageTrace<S>>,
    exchangers: Vec<ExchangerCache<S>>,
    neck: NeckTrace<S>,
    heads: Vec<HeadTrace<S>>,
    raw_reg: Vec<Array4<S>>,
}

/// Backbone stream channel capacity at an exchanger slot.
fn stream_cap(caps: &Realization, site: usize, pre: bool) -> usize {
    if pre {
        caps.backbone[site - 2]
    } else {
        caps.backbone[site - 1]
    }
}

impl<S: Scalar> Model<S> {
    /// Weight-sharing supernet: capacities at the config widths, every fusion
    /// scalar instantiated so any gene can realize a slice.
    pub fn supernet(config: &ModelConfig, seed: u64) -> Result<Self, DetectorError> {
        Self::build(config, Realization::full_width(config), true, seed)
    }

    /// Standalone model at fixed widths; only the realized fusion scalars exist.
    pub fn fixed(config: &ModelConfig, r: &Realization, seed: u64) -> Result<Self, DetectorError> {
        let full = Realization::full_width(config);
        for (block, got, cap) in [
            ("backbone_1", r.backbone[0], full.backbone[0]),
            ("backbone_2", r.backbone[1], full.backbone[1]),
            ("backbone_3", r.backbone[2], full.backbone[2]),
            ("backbone_4", r.backbone[3], full.backbone[3]),
            ("backbone_5", r.backbone[4], full.backbone[4]),
            ("stem_1", r.stem[0], full.stem[0]),
            ("stem_2", r.stem[1], full.stem[1]),
            ("stem_3", r.stem[2], full.stem[2]),
            ("neckhead_1", r.neckhead[0], full.neckhead[0]),
            ("neckhead_2", r.neckhead[1], full.neckhead[1]),
            ("neckhead_3", r.neckhead[2], full.neckhead[2]),
        ] {
            if got == 0 || got > cap {
                return Err(DetectorError::IncompatibleGene {
                    block: block.into(),
                    reason: format!("realized width {got} outside 1..={cap}"),
                });
            }
        }
        Self::build(config, r.clone(), false, seed)
    }

    fn build(
        config: &ModelConfig,
        caps: Realization,
        is_supernet: bool,
        seed: u64,
    ) -> Result<Self, DetectorError> {
        config.validate()?;
        if caps.fusion.len() != config.num_exchangers() {
            return Err(DetectorError::BadConfig(format!(
                "{} fusion options for {} exchangers",
                caps.fusion.len(),
                config.num_exchangers()
            )));
        }
        if config.variant == Variant::StemOnly && caps.stem[2] != caps.backbone[1] {
            return Err(DetectorError::IncompatibleGene {
                block: "stem_3".into(),
                reason: format!(
                    "stem-only graft needs stem width {} to equal stage-2 width {}",
                    caps.stem[2], caps.backbone[1]
                ),
            });
        }

        let mut params = ParamArena::new();
        let mut bufs = BufArena::new();
        let bb_in = config.routing.backbone_channels();
        let ad_in = config.routing.adapter_channels();

        let stem = config
            .variant
            .has_stem()
            .then(|| Stem::new(&mut params, &mut bufs, "stem", ad_in, caps.stem, seed));

        let mut stages = Vec::with_capacity(5);
        for i in 0..5 {
            let ci = if i == 0 { bb_in } else { caps.backbone[i - 1] };
            let name = format!("backbone.stage{}", i + 1);
            let down = UsConv::new(
                &mut params,
                &mut bufs,
                &format!("{name}.down"),
                ci,
                caps.backbone[i],
                3,
                2,
                seed,
            );
            let unit = Bottleneck::new(&mut params, &mut bufs, &name, caps.backbone[i], seed);
            stages.push(Stage { down, unit });
        }

        let mut exchangers = Vec::new();
        let mut seen_at_site = [0usize; 6];
        for (seq, (&site, &mode)) in
            config.exchanger_sites.iter().zip(&config.exchanger_modes).enumerate()
        {
            let pre = seen_at_site[site] == 0;
            seen_at_site[site] += 1;
            if !config.variant.keeps_exchanger(mode) {
                continue;
            }
            let stream = stream_cap(&caps, site, pre);
            let (cp_max, ca_max) = match mode {
                1 => (stream, caps.stem[2]),
                _ => (caps.stem[2], stream),
            };
            let (with_gamma, with_lambda) = if is_supernet {
                (true, true)
            } else {
                use crate::nn::fusion::FusionOption;
                let opt = caps.fusion[seq];
                (opt == FusionOption::Gated, opt == FusionOption::Scaled)
            };
            let ex = Exchanger::new(
                &mut params,
                &format!("exchanger.{}", seq + 1),
                ca_max,
                cp_max,
                with_gamma,
                with_lambda,
                seed,
            );
            exchangers.push(ExchangerSlot { ex, site, mode, pre, seq });
        }

        let nh = caps.neckhead;
        let neck = Neck {
            merge32: UsConv::new(
                &mut params,
                &mut bufs,
                "neck.s32.merge",
                caps.backbone[4],
                nh[2],
                3,
                1,
                seed,
            ),
            top16: UsConv::new(&mut params, &mut bufs, "neck.s16.top", nh[2], nh[1], 1, 1, seed),
            lat16: UsConv::new(
                &mut params,
                &mut bufs,
                "neck.s16.lat",
                caps.backbone[3],
                nh[1],
                1,
                1,
                seed,
            ),
            merge16: UsConv::new(&mut params, &mut bufs, "neck.s16.merge", nh[1], nh[1], 3, 1, seed),
            top8: UsConv::new(&mut params, &mut bufs, "neck.s8.top", nh[1], nh[0], 1, 1, seed),
            lat8: UsConv::new(
                &mut params,
                &mut bufs,
                "neck.s8.lat",
                caps.backbone[2],
                nh[0],
                1,
                1,
                seed,
            ),
            merge8: UsConv::new(&mut params, &mut bufs, "neck.s8.merge", nh[0], nh[0], 3, 1, seed),
        };

        let mut head = Vec::with_capacity(3);
        for (stride, w) in [(8usize, nh[0]), (16, nh[1]), (32, nh[2])] {
            let name = format!("head.s{stride}");
            head.push(HeadScale {
                cls_stem: UsConv::new(
                    &mut params,
                    &mut bufs,
                    &format!("{name}.cls_stem"),
                    w,
                    w,
                    3,
                    1,
                    seed,
                ),
                reg_stem: UsConv::new(
                    &mut params,
                    &mut bufs,
                    &format!("{name}.reg_stem"),
                    w,
                    w,
                    3,
                    1,
                    seed,
                ),
                cls_pred: PlainConv::new(
                    &mut params,
                    &format!("{name}.cls_pred"),
                    w,
                    config.num_classes,
                    1,
                    1,
                    0,
                    CLS_BIAS_INIT,
                    seed,
                ),
                reg_pred: PlainConv::new(
                    &mut params,
                    &format!("{name}.reg_pred"),
                    w,
                    4,
                    1,
                    1,
                    0,
                    0.0,
                    seed,
                ),
            });
        }

        Ok(Model {
            config: config.clone(),
            caps,
            is_supernet,
            seed,
            params,
            bufs,
            stem,
            stages,
            exchangers,
            neck,
            head,
        })
    }

    fn check_realization(&self, r: &Realization) -> Result<(), DetectorError> {
        if !self.is_supernet {
            if *r != self.caps {
                return Err(DetectorError::IncompatibleGene {
                    block: "model".into(),
                    reason: "fixed model can only realize its build widths".into(),
                });
            }
            return Ok(());
        }
        let caps = &self.caps;
        let blocks = [
            ("backbone_1", r.backbone[0], caps.backbone[0]),
            ("backbone_2", r.backbone[1], caps.backbone[1]),
            ("backbone_3", r.backbone[2], caps.backbone[2]),
            ("backbone_4", r.backbone[3], caps.backbone[3]),
            ("backbone_5", r.backbone[4], caps.backbone[4]),
            ("stem_1", r.stem[0], caps.stem[0]),
            ("stem_2", r.stem[1], caps.stem[1]),
            ("stem_3", r.stem[2], caps.stem[2]),
            ("neckhead_1", r.neckhead[0], caps.neckhead[0]),
            ("neckhead_2", r.neckhead[1], caps.neckhead[1]),
            ("neckhead_3", r.neckhead[2], caps.neckhead[2]),
        ];
        for (block, got, cap) in blocks {
            if got == 0 || got > cap {
                return Err(DetectorError::IncompatibleGene {
                    block: block.into(),
                    reason: format!("realized width {got} outside 1..={cap}"),
                });
            }
        }
        if r.fusion.len() != self.config.num_exchangers() {
            return Err(DetectorError::BadConfig(format!(
                "{} fusion options for {} exchangers",
                r.fusion.len(),
                self.config.num_exchangers()
            )));
        }
        if self.config.variant == Variant::StemOnly && r.stem[2] != r.backbone[1] {
            return Err(DetectorError::IncompatibleGene {
                block: "stem_3".into(),
                reason: format!(
                    "stem-only graft needs stem width {} to equal stage-2 width {}",
                    r.stem[2], r.backbone[1]
                ),
            });
        }
        Ok(())
    }

    /// Dual-branch forward. `heat` is `[N, 3, H, W]`, `gray` is `[N, 1, H, W]`;
    /// routing decides which feeds the backbone. H and W must be divisible
    /// by 32; scales come back finest first (strides 8, 16, 32).
    pub fn forward(
        &mut self,
        heat: &Array4<S>,
        gray: &Array4<S>,
        r: &Realization,
        mode: BnMode,
    ) -> Result<(DetectionOutput<S>, Trace<S>), DetectorError> {
        self.check_realization(r)?;
        let (bb_x, ad_x) = match self.config.routing {
            Routing::HeatToBackbone => (heat, gray),
            Routing::GrayToBackbone => (gray, heat),
        };
        let (n, cin, h, w) = bb_x.dim();
        assert_eq!(
            cin,
            self.config.routing.backbone_channels(),
            "backbone input channels disagree with routing"
        );
        if h % 32 != 0 || w % 32 != 0 {
            return Err(DetectorError::BadInputDims { h, w });
        }
        assert_eq!(ad_x.dim().0, n, "both representations must share the batch");
        assert_eq!((ad_x.dim().2, ad_x.dim().3), (h, w), "representation grids disagree");

        // Adapter stem.
        let mut adapter: Option<Array4<S>> = None;
        let mut stem_trace = None;
        if let Some(stem) = &self.stem {
            let (a, c) = stem.forward(&self.params, &mut self.bufs, ad_x, r.stem, mode)?;
            adapter = Some(a);
            stem_trace = Some(c);
        }
        let adapter_dim = adapter.as_ref().map(|a| a.dim());

        // Stages 1-2 build the stream the first exchanger sees.
        let mut stage_traces = Vec::with_capacity(5);
        let mut b = bb_x.clone();
        for i in 0..2 {
            let (y, dc) = self.stages[i].down.forward(
                &self.params,
                &mut self.bufs,
                &b,
                r.backbone[i],
                mode,
            );
            let (y, uc) =
                self.stages[i].unit.forward(&self.params, &mut self.bufs, &y, r.backbone[i], mode);
            b = y;
            stage_traces.push(StageTrace { down: dc, unit: uc });
        }
        if self.config.variant == Variant::StemOnly {
            b = &b + adapter.as_ref().expect("stem-only keeps the stem");
        }

        // Stages 3-5 with exchangers; snapshot the streams the neck reads.
        let mut ex_traces = Vec::with_capacity(self.exchangers.len());
        let mut ex_idx = 0usize;
        let mut c3 = None;
        let mut c4 = None;
        for site in 3..=5usize {
            for want_pre in [true, false] {
                if want_pre {
                    // pre-slots, then the stage itself
                    while ex_idx < self.exchangers.len()
                        && self.exchangers[ex_idx].site == site
                        && self.exchangers[ex_idx].pre
                    {
                        let slot = &self.exchangers[ex_idx];
                        let opt = r.fusion[slot.seq];
                        let a = adapter.as_ref().expect("exchangers require the stem");
                        let (out, cache) = match slot.mode {
                            1 => slot.ex.forward(&self.params, &b, a, opt),
                            _ => {
                                let (na, cache) = slot.ex.forward(&self.params, a, &b, opt);
                                adapter = Some(na);
                                (b.clone(), cache)
                            }
                        };
                        if slot.mode == 1 {
                            b = out;
                        }
                        ex_traces.push(cache);
                        ex_idx += 1;
                    }
                    let st = &self.stages[site - 1];
                    let (y, dc) = st.down.forward(
                        &self.params,
                        &mut self.bufs,
                        &b,
                        r.backbone[site - 1],
                        mode,
                    );
                    let (y, uc) = st.unit.forward(
                        &self.params,
                        &mut self.bufs,
                        &y,
                        r.backbone[site - 1],
                        mode,
                    );
                    b = y;
                    stage_traces.push(StageTrace { down: dc, unit: uc });
                } else {
                    while ex_idx < self.exchangers.len()
                        && self.exchangers[ex_idx].site == site
                        && !self.exchangers[ex_idx].pre
                    {
                        let slot = &self.exchangers[ex_idx];
                        let opt = r.fusion[slot.seq];
                        let a = adapter.as_ref().expect("exchangers require the stem");
                        match slot.mode {
                            1 => {
                                let (nb, cache) = slot.ex.forward(&self.params, &b, a, opt);
                                b = nb;
                                ex_traces.push(cache);
                            }
                            _ => {
                                let (na, cache) = slot.ex.forward(&self.params, a, &b, opt);
                                adapter = Some(na);
                                ex_traces.push(cache);
                            }
                        }
                        ex_idx += 1;
                    }
                }
            }
            if site == 3 {
                c3 = Some(b.clone());
            } else if site == 4 {
                c4 = Some(b.clone());
            }
        }
        debug_assert_eq!(ex_idx, self.exchangers.len());
        let (c3, c4, c5) = (c3.unwrap(), c4.unwrap(), b);

        // Top-down neck.
        let nh = r.neckhead;
        let (p5, t_m32) = self.neck.merge32.forward(&self.params, &mut self.bufs, &c5, nh[2], mode);
        let (t16, t_t16) = self.neck.top16.forward(&self.params, &mut self.bufs, &p5, nh[1], mode);
        let (l16, t_l16) = self.neck.lat16.forward(&self.params, &mut self.bufs, &c4, nh[1], mode);
        let s16 = &upsample2x(&t16) + &l16;
        let (p4, t_m16) = self.neck.merge16.forward(&self.params, &mut self.bufs, &s16, nh[1], mode);
        let (t8, t_t8) = self.neck.top8.forward(&self.params, &mut self.bufs, &p4, nh[0], mode);
        let (l8, t_l8) = self.neck.lat8.forward(&self.params, &mut self.bufs, &c3, nh[0], mode);
        let s8 = &upsample2x(&t8) + &l8;
        let (p3, t_m8) = self.neck.merge8.forward(&self.params, &mut self.bufs, &s8, nh[0], mode);
        let neck_trace = NeckTrace {
            merge32: t_m32,
            top16: t_t16,
            lat16: t_l16,
            merge16: t_m16,
            top8: t_t8,
            lat8: t_l8,
            merge8: t_m8,
        };

        // Decoupled heads; offsets are softplus(raw) scaled to normalized units.
        let mut scales = Vec::with_capacity(3);
        let mut head_traces = Vec::with_capacity(3);
        let mut raw_regs = Vec::with_capacity(3);
        for (k, p) in [&p3, &p4, &p5].into_iter().enumerate() {
            let hs = &self.head[k];
            let (hc, t_cs) = hs.cls_stem.forward(&self.params, &mut self.bufs, p, nh[k], mode);
            let (cls, t_cp) = hs.cls_pred.forward(&self.params, &hc, self.config.num_classes);
            let (hr, t_rs) = hs.reg_stem.forward(&self.params, &mut self.bufs, p, nh[k], mode);
            let (raw, t_rp) = hs.reg_pred.forward(&self.params, &hr, 4);
            let (gh, gw) = (raw.dim().2, raw.dim().3);
            let sx = S::from_f64(1.0 / gw as f64);
            let sy = S::from_f64(1.0 / gh as f64);
            let mut reg = raw.mapv(softplus);
            for (c, s) in [(0, sx), (1, sy), (2, sx), (3, sy)] {
                reg.index_axis_mut(Axis(1), c).mapv_inplace(|v| v * s);
            }
            scales.push(ScaleOut { stride: h / gh, cls, reg });
            head_traces.push(HeadTrace { cls_stem: t_cs, cls_pred: t_cp, reg_stem: t_rs, reg_pred: t_rp });
            raw_regs.push(raw);
        }

        let trace = Trace {
            r: r.clone(),
            stem: stem_trace,
            adapter_dim,
            stages: stage_traces,
            exchangers: ex_traces,
            neck: neck_trace,
            heads: head_traces,
            raw_reg: raw_regs,
        };
        Ok((DetectionOutput { scales }, trace))
    }

    /// Forward at the model's own capacities.
    pub fn forward_full(
        &mut self,
        heat: &Array4<S>,
        gray: &Array4<S>,
        mode: BnMode,
    ) -> Result<(DetectionOutput<S>, Trace<S>), DetectorError> {
        let r = self.caps.clone();
        self.forward(heat, gray, &r, mode)
    }

    /// Accumulates parameter gradients for a forward pass made with
    /// `BnMode::Train`. `gcls`/`greg` are cotangents of the class logits and
    /// the normalized offsets, one per scale in output order.
    pub fn backward(
        &mut self,
        gcls: &[Array4<S>],
        greg: &[Array4<S>],
        trace: &Trace<S>,
        touched: &mut TouchedSet,
    ) {
        assert_eq!(gcls.len(), 3);
        assert_eq!(greg.len(), 3);

        // Heads.
        let mut dp = Vec::with_capacity(3);
        for k in 0..3 {
            let hs = &self.head[k];
            let ht = &trace.heads[k];
            let raw = &trace.raw_reg[k];
            let (gh, gw) = (raw.dim().2, raw.dim().3);
            let sx = S::from_f64(1.0 / gw as f64);
            let sy = S::from_f64(1.0 / gh as f64);
            let mut draw = greg[k].clone();
            for (c, s) in [(0, sx), (1, sy), (2, sx), (3, sy)] {
                let mut dch = draw.index_axis_mut(Axis(1), c);
                let rch = raw.index_axis(Axis(1), c);
                ndarray::Zip::from(&mut dch)
                    .and(&rch)
                    .for_each(|d, &rv| *d = *d * s * sigmoid(rv));
            }
            let dhr = hs.reg_pred.backward(&mut self.params, touched, &draw, &ht.reg_pred);
            let dp_r = hs.reg_stem.backward(&mut self.params, touched, &dhr, &ht.reg_stem);
            let dhc = hs.cls_pred.backward(&mut self.params, touched, &gcls[k], &ht.cls_pred);
            let dp_c = hs.cls_stem.backward(&mut self.params, touched, &dhc, &ht.cls_stem);
            dp.push(&dp_r + &dp_c);
        }
        let (dp3, mut dp4, mut dp5) = {
            let mut it = dp.into_iter();
            (it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
        };

        // Neck, fine to coarse.
        let nt = &trace.neck;
        let ds8 = self.neck.merge8.backward(&mut self.params, touched, &dp3, &nt.merge8);
        let dc3 = self.neck.lat8.backward(&mut self.params, touched, &ds8, &nt.lat8);
        let dt8 = upsample2x_backward(&ds8);
        dp4 = &dp4 + &self.neck.top8.backward(&mut self.params, touched, &dt8, &nt.top8);
        let ds16 = self.neck.merge16.backward(&mut self.params, touched, &dp4, &nt.merge16);
        let dc4 = self.neck.lat16.backward(&mut self.params, touched, &ds16, &nt.lat16);
        let dt16 = upsample2x_backward(&ds16);
        dp5 = &dp5 + &self.neck.top16.backward(&mut self.params, touched, &dt16, &nt.top16);
        let dc5 = self.neck.merge32.backward(&mut self.params, touched, &dp5, &nt.merge32);

        // Backbone and exchangers, exact reverse of the forward order. `da`
        // always holds the complete gradient of the adapter stream version
        // current at this point of the walk.
        let mut db = dc5;
        let mut da = trace.adapter_dim.map(Array4::zeros);
        let mut ex_idx = self.exchangers.len();
        for site in [5usize, 4, 3] {
            while ex_idx > 0
                && self.exchangers[ex_idx - 1].site == site
                && !self.exchangers[ex_idx - 1].pre
            {
                ex_idx -= 1;
                let slot = &self.exchangers[ex_idx];
                let cache = &trace.exchangers[ex_idx];
                match slot.mode {
                    1 => {
                        let (dprim, daux) =
                            slot.ex.backward(&mut self.params, touched, &db, cache);
                        db = dprim;
                        da.as_mut().unwrap().zip_mut_with(&daux, |a, &b| *a = *a + b);
                    }
                    _ => {
                        let gout = da.take().unwrap();
                        let (dprim, daux) =
                            slot.ex.backward(&mut self.params, touched, &gout, cache);
                        da = Some(dprim);
                        db = &db + &daux;
                    }
                }
            }
            let st = &self.stages[site - 1];
            let tr = &trace.stages[site - 1];
            db = st.unit.backward(&mut self.params, touched, &db, &tr.unit);
            db = st.down.backward(&mut self.params, touched, &db, &tr.down);
            while ex_idx > 0
                && self.exchangers[ex_idx - 1].site == site
                && self.exchangers[ex_idx - 1].pre
            {
                ex_idx -= 1;
                let slot = &self.exchangers[ex_idx];
                let cache = &trace.exchangers[ex_idx];
                match slot.mode {
                    1 => {
                        let (dprim, daux) =
                            slot.ex.backward(&mut self.params, touched, &db, cache);
                        db = dprim;
                        da.as_mut().unwrap().zip_mut_with(&daux, |a, &b| *a = *a + b);
                    }
                    _ => {
                        let gout = da.take().unwrap();
                        let (dprim, daux) =
                            slot.ex.backward(&mut self.params, touched, &gout, cache);
                        da = Some(dprim);
                        db = &db + &daux;
                    }
                }
            }
            if site == 5 {
                db = &db + &dc4;
            } else if site == 4 {
                db = &db + &dc3;
            }
        }
        debug_assert_eq!(ex_idx, 0);

        if self.config.variant == Variant::StemOnly {
            da = Some(db.clone());
        }
        for i in [1usize, 0] {
            let st = &self.stages[i];
            let tr = &trace.stages[i];
            db = st.unit.backward(&mut self.params, touched, &db, &tr.unit);
            db = st.down.backward(&mut self.params, touched, &db, &tr.down);
        }

        if let (Some(stem), Some(da), Some(st)) = (&self.stem, da, &trace.stem) {
            stem.backward(&mut self.params, touched, &da, st);
        }
    }

    /// Copies the realized slice of every shared tensor into a standalone
    /// fixed model — the weight-inheritance step of the one-shot pipeline.
    pub fn extract_subnet(&self, r: &Realization) -> Result<Model<S>, DetectorError> {
        if !self.is_supernet {
            return Err(DetectorError::BadConfig(
                "subnets are extracted from a supernet".into(),
            ));
        }
        self.check_realization(r)?;
        let mut sub = Model::fixed(&self.config, r, self.seed)?;
        for id in sub.params.ids() {
            let name = sub.params.name(id).to_owned();
            let src_id = self
                .params
                .id(&name)
                .unwrap_or_else(|| panic!("supernet is missing tensor {name}"));
            let src = self.params.value(src_id);
            let dst = sub.params.value_mut(id);
            copy_prefix(dst, src);
        }
        for id in sub.bufs.ids() {
            let name = sub.bufs.name(id).to_owned();
            let src_id = self
                .bufs
                .id(&name)
                .unwrap_or_else(|| panic!("supernet is missing buffer {name}"));
            let src = self.bufs.value(src_id);
            let dst = sub.bufs.value_mut(id);
            copy_prefix(dst, src);
        }
        Ok(sub)
    }
}

/// `dst = src[0..d0, 0..d1, ...]` where the target is a prefix box of the source.
fn copy_prefix<S: Scalar>(dst: &mut ArrayD<S>, src: &ArrayD<S>) {
    assert_eq!(dst.ndim(), src.ndim(), "tensor ranks disagree");
    let view = src.slice_each_axis(|ax| Slice::from(0..dst.shape()[ax.axis.index()]));
    dst.assign(&view);
}
