//! Analytic cost models. These walk the realized architecture with closed
//! formulas and never touch the tensor arenas, so they double as an
//! independent check on the built models.

use crate::detector::{ModelConfig, Realization};
use crate::nn::attention::mid_channels;
use crate::nn::fusion::FusionOption;

/// Weights plus bias of a plain convolution.
pub fn plain_conv_params(ci: usize, co: usize, k: usize) -> usize {
    co * (ci * k * k + 1)
}

/// Plain convolution followed by batch norm (scale and shift).
pub fn bn_conv_params(ci: usize, co: usize, k: usize) -> usize {
    co * (ci * k * k + 3)
}

/// Multiply-accumulates counted as two FLOPs each.
pub fn conv_flops(ci: usize, co: usize, k: usize, ho: usize, wo: usize) -> u64 {
    2 * (ci * co * k * k * ho * wo) as u64
}

fn exchanger_params(cp: usize, ca: usize, option: FusionOption) -> usize {
    let mid = mid_channels(cp);
    let proj = plain_conv_params(ca, cp, 1);
    let att = plain_conv_params(cp, mid, 1) + 2 * plain_conv_params(mid, cp, 1);
    let scalars = 1 // alpha
        + match option {
            FusionOption::Gated | FusionOption::Scaled => 1,
            FusionOption::Sum => 0,
        };
    proj + att + scalars
}

/// Kept exchanger slots with their realized primary/auxiliary channels:
/// `(seq, primary, aux, aux_h_div)` where `aux_h_div` is the divisor of the
/// input resolution the auxiliary stream lives at.
fn exchanger_slots(config: &ModelConfig, r: &Realization) -> Vec<(usize, usize, usize, usize)> {
    let mut seen = [0usize; 6];
    let mut out = Vec::new();
    for (seq, (&site, &mode)) in
        config.exchanger_sites.iter().zip(&config.exchanger_modes).enumerate()
    {
        let pre = seen[site] == 0;
        seen[site] += 1;
        if !config.variant.keeps_exchanger(mode) {
            continue;
        }
        let stream = if pre { r.backbone[site - 2] } else { r.backbone[site - 1] };
        let stream_div = if pre { 1 << (site - 1) } else { 1 << site };
        match mode {
            1 => out.push((seq, stream, r.stem[2], 4)),
            _ => out.push((seq, r.stem[2], stream, stream_div)),
        }
    }
    out
}

/// Exact trainable-parameter count of the fixed model `config` + `r` builds.
pub fn count_params(config: &ModelConfig, r: &Realization) -> usize {
    let mut total = 0usize;

    if config.variant.has_stem() {
        let ad_in = config.routing.adapter_channels();
        total += bn_conv_params(ad_in, r.stem[0], 3);
        total += bn_conv_params(r.stem[0], r.stem[1], 3);
        total += bn_conv_params(r.stem[1], r.stem[2], 3);
    }

    let bb_in = config.routing.backbone_channels();
    for i in 0..5 {
        let ci = if i == 0 { bb_in } else { r.backbone[i - 1] };
        let w = r.backbone[i];
        total += bn_conv_params(ci, w, 3); // down
        total += 2 * bn_conv_params(w, w, 3); // residual unit
    }

    for (seq, cp, ca, _) in exchanger_slots(config, r) {
        total += exchanger_params(cp, ca, r.fusion[seq]);
    }

    let nh = r.neckhead;
    total += bn_conv_params(r.backbone[4], nh[2], 3);
    total += bn_conv_params(nh[2], nh[1], 1);
    total += bn_conv_params(r.backbone[3], nh[1], 1);
    total += bn_conv_params(nh[1], nh[1], 3);
    total += bn_conv_params(nh[1], nh[0], 1);
    total += bn_conv_params(r.backbone[2], nh[0], 1);
    total += bn_conv_params(nh[0], nh[0], 3);

    for w in nh {
        total += 2 * bn_conv_params(w, w, 3);
        total += plain_conv_params(w, config.num_classes, 1);
        total += plain_conv_params(w, 4, 1);
    }

    total
}

/// FLOPs of one forward pass at `(h, w)` input resolution, spatial
/// convolutions only: the attention's pooled-descriptor convolutions and all
/// normalization/activation work are excluded.
pub fn estimate_flops(config: &ModelConfig, r: &Realization, h: usize, w: usize) -> u64 {
    assert!(h % 32 == 0 && w % 32 == 0, "input must sit on the stride grid");
    let at = |div: usize| (h / div, w / div);
    let mut total = 0u64;

    if config.variant.has_stem() {
        let ad_in = config.routing.adapter_channels();
        let (h2, w2) = at(2);
        let (h4, w4) = at(4);
        total += conv_flops(ad_in, r.stem[0], 3, h2, w2);
        total += conv_flops(r.stem[0], r.stem[1], 3, h4, w4);
        total += conv_flops(r.stem[1], r.stem[2], 3, h4, w4);
    }

    let bb_in = config.routing.backbone_channels();
    for i in 0..5 {
        let ci = if i == 0 { bb_in } else { r.backbone[i - 1] };
        let wd = r.backbone[i];
        let (ho, wo) = at(1 << (i + 1));
        total += conv_flops(ci, wd, 3, ho, wo);
        total += 2 * conv_flops(wd, wd, 3, ho, wo);
    }

    // each exchanger projects its auxiliary stream at the aux resolution
    for (_, cp, ca, aux_div) in exchanger_slots(config, r) {
        let (ho, wo) = at(aux_div);
        total += conv_flops(ca, cp, 1, ho, wo);
    }

    let nh = r.neckhead;
    let (h32, w32) = at(32);
    let (h16, w16) = at(16);
    let (h8, w8) = at(8);
    total += conv_flops(r.backbone[4], nh[2], 3, h32, w32);
    total += conv_flops(nh[2], nh[1], 1, h32, w32);
    total += conv_flops(r.backbone[3], nh[1], 1, h16, w16);
    total += conv_flops(nh[1], nh[1], 3, h16, w16);
    total += conv_flops(nh[1], nh[0], 1, h16, w16);
    total += conv_flops(r.backbone[2], nh[0], 1, h8, w8);
    total += conv_flops(nh[0], nh[0], 3, h8, w8);

    for (k, wd) in nh.iter().enumerate() {
        let (ho, wo) = at(8 << k);
        total += 2 * conv_flops(*wd, *wd, 3, ho, wo);
        total += conv_flops(*wd, config.num_classes, 1, ho, wo);
        total += conv_flops(*wd, 4, 1, ho, wo);
    }

    total
}
