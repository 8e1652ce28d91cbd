//! Anchor-free training loss. Every ground-truth box claims exactly one grid
//! cell: the one under its center on the finest grid whose cells are at least
//! as large as the box (falling back to the coarsest), bumping to coarser
//! grids when the cell is already claimed. Classification is mean BCE over
//! every cell and class; localization is mean (1 − CIoU) over claimed cells.

use ndarray::Array4;

use crate::detector::{DetectionOutput, LossBreakdown};
use crate::nn::Scalar;
use crate::rdmap::Annotation;

pub const LAMBDA_BOX: f64 = 5.0;

#[derive(Debug, PartialEq)]
pub(crate) struct Target {
    pub scale: usize,
    pub gy: usize,
    pub gx: usize,
    pub class_id: usize,
    /// GT corners (x1, y1, x2, y2), normalized.
    pub corners: [f64; 4],
}

/// `grids` are (gh, gw) finest first. Claims are resolved in annotation order.
pub(crate) fn assign_targets(grids: &[(usize, usize)], anns: &[Annotation]) -> Vec<Target> {
    let mut taken = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(anns.len());
    for ann in anns {
        let mut level = grids.len() - 1;
        for (k, &(gh, gw)) in grids.iter().enumerate() {
            if ann.w <= 1.0 / gw as f64 && ann.h <= 1.0 / gh as f64 {
                level = k;
                break;
            }
        }
        for (k, &(gh, gw)) in grids.iter().enumerate().skip(level) {
            let gx = ((ann.cx * gw as f64).floor() as usize).min(gw - 1);
            let gy = ((ann.cy * gh as f64).floor() as usize).min(gh - 1);
            if taken.insert((k, gy, gx)) {
                out.push(Target {
                    scale: k,
                    gy,
                    gx,
                    class_id: ann.class_id,
                    corners: [
                        ann.cx - ann.w / 2.0,
                        ann.cy - ann.h / 2.0,
                        ann.cx + ann.w / 2.0,
                        ann.cy + ann.h / 2.0,
                    ],
                });
                break;
            }
        }
        // every grid cell under the center already claimed: the box is dropped
    }
    out
}

fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// CIoU and its gradient with respect to the predicted corners. The aspect
/// term's balance weight is treated as a constant of the current values.
fn ciou_grad(p: [f64; 4], g: [f64; 4]) -> (f64, [f64; 4]) {
    const EPS: f64 = 1e-12;
    let [px1, py1, px2, py2] = p;
    let [gx1, gy1, gx2, gy2] = g;
    let pw = (px2 - px1).max(0.0);
    let ph = (py2 - py1).max(0.0);
    let gw = gx2 - gx1;
    let gh = gy2 - gy1;

    let iw = (px2.min(gx2) - px1.max(gx1)).max(0.0);
    let ih = (py2.min(gy2) - py1.max(gy1)).max(0.0);
    let inter = iw * ih;
    let union = pw * ph + gw * gh - inter;
    let iou = inter / (union + EPS);

    let gate = |cond: bool, v: f64| if cond { v } else { 0.0 };
    let d_inter = [
        gate(px1 >= gx1 && iw > 0.0, -ih),
        gate(py1 >= gy1 && ih > 0.0, -iw),
        gate(px2 <= gx2 && iw > 0.0, ih),
        gate(py2 <= gy2 && ih > 0.0, iw),
    ];
    let d_area = [
        gate(pw > 0.0, -ph),
        gate(ph > 0.0, -pw),
        gate(pw > 0.0, ph),
        gate(ph > 0.0, pw),
    ];
    let mut d_iou = [0.0; 4];
    for i in 0..4 {
        let d_union = d_area[i] - d_inter[i];
        d_iou[i] = (d_inter[i] * (union + EPS) - inter * d_union) / ((union + EPS) * (union + EPS));
    }

    // normalized center distance over the enclosing box diagonal
    let bpx = (px1 + px2) / 2.0;
    let bpy = (py1 + py2) / 2.0;
    let bgx = (gx1 + gx2) / 2.0;
    let bgy = (gy1 + gy2) / 2.0;
    let rho2 = (bpx - bgx) * (bpx - bgx) + (bpy - bgy) * (bpy - bgy);
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let c2 = cw * cw + ch * ch + EPS;
    let d_rho2 = [bpx - bgx, bpy - bgy, bpx - bgx, bpy - bgy];
    let d_c2 = [
        gate(px1 <= gx1, -2.0 * cw),
        gate(py1 <= gy1, -2.0 * ch),
        gate(px2 >= gx2, 2.0 * cw),
        gate(py2 >= gy2, 2.0 * ch),
    ];
    let u = rho2 / c2;
    let mut d_u = [0.0; 4];
    for i in 0..4 {
        d_u[i] = (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2);
    }

    // aspect-ratio consistency; atan2 keeps degenerate widths finite
    let phi = f64::atan2(gw, gh) - f64::atan2(pw, ph);
    let v = 4.0 / (std::f64::consts::PI * std::f64::consts::PI) * phi * phi;
    let denom = pw * pw + ph * ph + EPS;
    let dv_dpw = -8.0 / (std::f64::consts::PI * std::f64::consts::PI) * phi * (ph / denom);
    let dv_dph = 8.0 / (std::f64::consts::PI * std::f64::consts::PI) * phi * (pw / denom);
    let d_v = [
        gate(pw > 0.0, -dv_dpw),
        gate(ph > 0.0, -dv_dph),
        gate(pw > 0.0, dv_dpw),
        gate(ph > 0.0, dv_dph),
    ];
    let alpha = v / (1.0 - iou + v + EPS);

    let ciou = iou - u - alpha * v;
    let mut d = [0.0; 4];
    for i in 0..4 {
        d[i] = d_iou[i] - d_u[i] - alpha * d_v[i];
    }
    (ciou, d)
}

fn grids_of<S: Scalar>(out: &DetectionOutput<S>) -> Vec<(usize, usize)> {
    out.scales.iter().map(|s| (s.cls.dim().2, s.cls.dim().3)).collect()
}

/// Loss only; see [`loss_and_grads`] for the training path.
pub fn compute_loss<S: Scalar>(
    out: &DetectionOutput<S>,
    targets: &[Vec<Annotation>],
) -> LossBreakdown {
    loss_impl(out, targets, false).0
}

/// Loss plus cotangents of the class logits and the normalized offsets,
/// already weighted so they are gradients of `total`.
pub fn loss_and_grads<S: Scalar>(
    out: &DetectionOutput<S>,
    targets: &[Vec<Annotation>],
) -> (LossBreakdown, Vec<Array4<S>>, Vec<Array4<S>>) {
    let (b, g) = loss_impl(out, targets, true);
    let (gcls, greg) = g.expect("grads requested");
    (b, gcls, greg)
}

type Grads<S> = (Vec<Array4<S>>, Vec<Array4<S>>);

fn loss_impl<S: Scalar>(
    out: &DetectionOutput<S>,
    targets: &[Vec<Annotation>],
    want_grads: bool,
) -> (LossBreakdown, Option<Grads<S>>) {
    let n = out.scales[0].cls.dim().0;
    assert_eq!(targets.len(), n, "one annotation list per sample");
    let num_classes = out.scales[0].cls.dim().1;
    let grids = grids_of(out);

    let cell_count: usize = out
        .scales
        .iter()
        .map(|s| s.cls.dim().0 * s.cls.dim().1 * s.cls.dim().2 * s.cls.dim().3)
        .sum();

    let mut gcls: Vec<Array4<S>> = Vec::new();
    let mut greg: Vec<Array4<S>> = Vec::new();
    if want_grads {
        for s in &out.scales {
            gcls.push(Array4::zeros(s.cls.dim()));
            greg.push(Array4::zeros(s.reg.dim()));
        }
    }

    // classification: positives first, then one pass for the negative sea
    let mut cls_loss = 0.0;
    let mut box_loss = 0.0;
    let mut assigned = 0usize;

    let mut positives: Vec<Vec<Target>> = Vec::with_capacity(n);
    for anns in targets {
        positives.push(assign_targets(&grids, anns));
    }

    for (sample, list) in positives.iter().enumerate() {
        for t in list {
            assert!(t.class_id < num_classes, "class id out of range");
            let sc = &out.scales[t.scale];
            let (gh, gw) = grids[t.scale];
            // positive replaces the negative term this cell/class would get
            let z = sc.cls[[sample, t.class_id, t.gy, t.gx]].to_f64();
            cls_loss += bce(z, 1.0) - bce(z, 0.0);

            let ccx = (t.gx as f64 + 0.5) / gw as f64;
            let ccy = (t.gy as f64 + 0.5) / gh as f64;
            let l = sc.reg[[sample, 0, t.gy, t.gx]].to_f64();
            let tt = sc.reg[[sample, 1, t.gy, t.gx]].to_f64();
            let r = sc.reg[[sample, 2, t.gy, t.gx]].to_f64();
            let b = sc.reg[[sample, 3, t.gy, t.gx]].to_f64();
            let pred = [ccx - l, ccy - tt, ccx + r, ccy + b];
            let (ciou, dpred) = ciou_grad(pred, t.corners);
            box_loss += 1.0 - ciou;
            assigned += 1;

            if want_grads {
                // d total / d offsets = LAMBDA_BOX * -(1/n_pos) * dciou,
                // chained through corners = center -/+ offset (n_pos divided later)
                let g = &mut greg[t.scale];
                g[[sample, 0, t.gy, t.gx]] = S::from_f64(dpred[0]);
                g[[sample, 1, t.gy, t.gx]] = S::from_f64(dpred[1]);
                g[[sample, 2, t.gy, t.gx]] = S::from_f64(-dpred[2]);
                g[[sample, 3, t.gy, t.gx]] = S::from_f64(-dpred[3]);
            }
        }
    }

    for (k, sc) in out.scales.iter().enumerate() {
        if want_grads {
            let g = &mut gcls[k];
            ndarray::Zip::from(g).and(&sc.cls).for_each(|gv, &zv| {
                let z = zv.to_f64();
                // negative-target BCE gradient; positives corrected below
                *gv = S::from_f64(sigmoid64(z) / cell_count as f64);
            });
        }
        for &z in sc.cls.iter() {
            cls_loss += bce(z.to_f64(), 0.0);
        }
    }
    if want_grads {
        for (sample, list) in positives.iter().enumerate() {
            for t in list {
                let z = out.scales[t.scale].cls[[sample, t.class_id, t.gy, t.gx]].to_f64();
                gcls[t.scale][[sample, t.class_id, t.gy, t.gx]] =
                    S::from_f64((sigmoid64(z) - 1.0) / cell_count as f64);
            }
        }
    }

    cls_loss /= cell_count as f64;
    if assigned > 0 {
        box_loss /= assigned as f64;
    }
    if want_grads && assigned > 0 {
        let scale = S::from_f64(LAMBDA_BOX / assigned as f64);
        for g in &mut greg {
            g.mapv_inplace(|v| v * scale);
        }
    }

    let breakdown = LossBreakdown {
        cls_loss,
        box_loss,
        total: cls_loss + LAMBDA_BOX * box_loss,
    };
    let grads = want_grads.then_some((gcls, greg));
    (breakdown, grads)
}

fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ScaleOut;
    use crate::nn::param_rng;
    use rand::Rng;

    fn ann(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Annotation {
        Annotation { class_id, cx, cy, w, h }
    }

    fn blank_output(n: usize, classes: usize, logit: f64) -> DetectionOutput<f64> {
        let scales = [(8usize, 8usize), (4, 4), (2, 2)]
            .iter()
            .enumerate()
            .map(|(k, &(gh, gw))| ScaleOut {
                stride: 8 << k,
                cls: Array4::from_elem((n, classes, gh, gw), logit),
                reg: Array4::from_elem((n, 4, gh, gw), 0.01),
            })
            .collect();
        DetectionOutput { scales }
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        // both boxes centered exactly on cell centers of the finest grid
        let anns = vec![ann(0, 3.5 / 8.0, 1.5 / 8.0, 0.10, 0.08), ann(1, 6.5 / 8.0, 5.5 / 8.0, 0.05, 0.12)];
        let mut out = blank_output(1, 2, -20.0);
        for a in &anns {
            let gx = (a.cx * 8.0).floor() as usize;
            let gy = (a.cy * 8.0).floor() as usize;
            out.scales[0].cls[[0, a.class_id, gy, gx]] = 20.0;
            out.scales[0].reg[[0, 0, gy, gx]] = a.w / 2.0;
            out.scales[0].reg[[0, 1, gy, gx]] = a.h / 2.0;
            out.scales[0].reg[[0, 2, gy, gx]] = a.w / 2.0;
            out.scales[0].reg[[0, 3, gy, gx]] = a.h / 2.0;
        }
        let l = compute_loss(&out, &[anns]);
        assert!(l.box_loss <= 1e-6, "box loss {}", l.box_loss);
        assert!(l.cls_loss <= 1e-3, "cls loss {}", l.cls_loss);
    }

    #[test]
    fn empty_scene_with_confident_negatives_is_free() {
        let out = blank_output(2, 3, -20.0);
        let l = compute_loss(&out, &[vec![], vec![]]);
        assert_eq!(l.box_loss, 0.0);
        assert!(l.total <= 1e-3, "total {}", l.total);
    }

    #[test]
    fn targets_land_on_the_finest_fitting_grid() {
        let grids = [(8, 8), (4, 4), (2, 2)];
        // small box: finest; mid box: stride 16; huge box: coarsest
        let t = assign_targets(&grids, &[ann(0, 0.3, 0.3, 0.1, 0.1)]);
        assert_eq!(t[0].scale, 0);
        let t = assign_targets(&grids, &[ann(0, 0.3, 0.3, 0.2, 0.1)]);
        assert_eq!(t[0].scale, 1);
        let t = assign_targets(&grids, &[ann(0, 0.5, 0.5, 0.9, 0.9)]);
        assert_eq!(t[0].scale, 2);
        assert_eq!((t[0].gy, t[0].gx), (1, 1));
    }

    #[test]
    fn claimed_cells_bump_the_next_box_to_a_coarser_grid() {
        let grids = [(8, 8), (4, 4), (2, 2)];
        let a = ann(0, 0.26, 0.26, 0.05, 0.05);
        let b = ann(1, 0.28, 0.27, 0.06, 0.05);
        let t = assign_targets(&grids, &[a, b]);
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].scale, t[0].gy, t[0].gx), (0, 2, 2));
        assert_eq!((t[1].scale, t[1].gy, t[1].gx), (1, 1, 1));

        // a third collision at every level is dropped
        let c = ann(0, 0.27, 0.26, 0.05, 0.04);
        let d = ann(0, 0.26, 0.28, 0.04, 0.05);
        let t = assign_targets(&grids, &[a, b, c, d]);
        assert_eq!(t.len(), 3);
        assert_eq!(t[2].scale, 2);
    }

    #[test]
    fn loss_matches_a_straight_line_reimplementation() {
        let mut rng = param_rng(21, "loss-oracle");
        let n = 2;
        let classes = 3;
        let mut out = blank_output(n, classes, 0.0);
        for s in &mut out.scales {
            s.cls.mapv_inplace(|_| rng.random_range(-3.0..3.0));
            s.reg.mapv_inplace(|_| rng.random_range(0.001..0.2));
        }
        let targets =
            vec![vec![ann(1, 0.41, 0.37, 0.09, 0.11), ann(2, 0.72, 0.55, 0.30, 0.28)], vec![]];
        let got = compute_loss(&out, &targets);

        // ---- independent straight-line recomputation ----
        let grids = [(8usize, 8usize), (4, 4), (2, 2)];
        // box 1: 0.09 <= 1/8 -> scale 0, cell (floor(0.37*8), floor(0.41*8)) = (2, 3)
        // box 2: 0.30 > 1/4, <= 1/2 -> scale 2, cell (1, 1)
        let picks = [(0usize, 0usize, 2usize, 3usize, 1usize), (0, 2, 1, 1, 2)];
        let mut cls = 0.0;
        let mut cells = 0.0;
        for (k, &(gh, gw)) in grids.iter().enumerate() {
            for smp in 0..n {
                for c in 0..classes {
                    for y in 0..gh {
                        for x in 0..gw {
                            let z: f64 = out.scales[k].cls[[smp, c, y, x]];
                            let y_t = picks
                                .iter()
                                .any(|&(s, sc, gy, gx, cl)| {
                                    s == smp && sc == k && gy == y && gx == x && cl == c
                                });
                            let y_t = if y_t { 1.0 } else { 0.0 };
                            cls += z.max(0.0) - z * y_t + (1.0 + (-z.abs()).exp()).ln();
                            cells += 1.0;
                        }
                    }
                }
            }
        }
        cls /= cells;
        let mut bx = 0.0;
        for (i, &(smp, k, gy, gx, _)) in picks.iter().enumerate() {
            let (gh, gw) = grids[k];
            let a = &targets[smp][i];
            let ccx = (gx as f64 + 0.5) / gw as f64;
            let ccy = (gy as f64 + 0.5) / gh as f64;
            let p = [
                ccx - out.scales[k].reg[[smp, 0, gy, gx]],
                ccy - out.scales[k].reg[[smp, 1, gy, gx]],
                ccx + out.scales[k].reg[[smp, 2, gy, gx]],
                ccy + out.scales[k].reg[[smp, 3, gy, gx]],
            ];
            let g = [a.cx - a.w / 2.0, a.cy - a.h / 2.0, a.cx + a.w / 2.0, a.cy + a.h / 2.0];
            let iw = (p[2].min(g[2]) - p[0].max(g[0])).max(0.0);
            let ih = (p[3].min(g[3]) - p[1].max(g[1])).max(0.0);
            let inter = iw * ih;
            let ap = (p[2] - p[0]) * (p[3] - p[1]);
            let ag = (g[2] - g[0]) * (g[3] - g[1]);
            let iou = inter / (ap + ag - inter + 1e-12);
            let rho2 = ((p[0] + p[2]) / 2.0 - a.cx).powi(2) + ((p[1] + p[3]) / 2.0 - a.cy).powi(2);
            let c2 = (p[2].max(g[2]) - p[0].min(g[0])).powi(2)
                + (p[3].max(g[3]) - p[1].min(g[1])).powi(2)
                + 1e-12;
            let phi = f64::atan2(g[2] - g[0], g[3] - g[1]) - f64::atan2(p[2] - p[0], p[3] - p[1]);
            let v = 4.0 / std::f64::consts::PI.powi(2) * phi * phi;
            let alpha = v / (1.0 - iou + v + 1e-12);
            bx += 1.0 - (iou - rho2 / c2 - alpha * v);
        }
        bx /= picks.len() as f64;

        assert!((got.cls_loss - cls).abs() <= 1e-6, "{} vs {cls}", got.cls_loss);
        assert!((got.box_loss - bx).abs() <= 1e-6, "{} vs {bx}", got.box_loss);
        assert!((got.total - (cls + 5.0 * bx)).abs() <= 1e-6);
    }

    // Straight-line recomputation of the three CIoU terms, independent of
    // the production code.
    fn ciou_terms(p: [f64; 4], g: [f64; 4]) -> (f64, f64, f64) {
        let pw = (p[2] - p[0]).max(0.0);
        let ph = (p[3] - p[1]).max(0.0);
        let gw = g[2] - g[0];
        let gh = g[3] - g[1];
        let iw = (p[2].min(g[2]) - p[0].max(g[0])).max(0.0);
        let ih = (p[3].min(g[3]) - p[1].max(g[1])).max(0.0);
        let inter = iw * ih;
        let iou = inter / (pw * ph + gw * gh - inter + 1e-12);
        let rho2 = ((p[0] + p[2]) / 2.0 - (g[0] + g[2]) / 2.0).powi(2)
            + ((p[1] + p[3]) / 2.0 - (g[1] + g[3]) / 2.0).powi(2);
        let cw = p[2].max(g[2]) - p[0].min(g[0]);
        let ch = p[3].max(g[3]) - p[1].min(g[1]);
        let c2 = cw * cw + ch * ch + 1e-12;
        let phi = f64::atan2(gw, gh) - f64::atan2(pw, ph);
        let v = 4.0 / std::f64::consts::PI.powi(2) * phi * phi;
        (iou, rho2 / c2, v)
    }

    #[test]
    fn ciou_gradients_match_finite_differences() {
        let cases = [
            // overlapping
            ([0.2, 0.2, 0.5, 0.6], [0.3, 0.25, 0.55, 0.5]),
            // disjoint
            ([0.1, 0.1, 0.2, 0.2], [0.6, 0.6, 0.8, 0.9]),
            // pred contains gt
            ([0.1, 0.1, 0.9, 0.9], [0.3, 0.3, 0.5, 0.5]),
            // gt contains pred
            ([0.4, 0.4, 0.5, 0.5], [0.2, 0.2, 0.8, 0.8]),
        ];
        for (p, g) in cases {
            // The aspect weight is a constant in the gradient, so the
            // difference quotient must hold it at its base-point value.
            let (iou0, u0, v0) = ciou_terms(p, g);
            let alpha0 = v0 / (1.0 - iou0 + v0 + 1e-12);
            let (val, grad) = ciou_grad(p, g);
            assert!((val - (iou0 - u0 - alpha0 * v0)).abs() <= 1e-9, "value at {p:?}");
            let frozen = |q: [f64; 4]| {
                let (i, u, v) = ciou_terms(q, g);
                i - u - alpha0 * v
            };
            for i in 0..4 {
                let mut up = p;
                up[i] += 1e-6;
                let mut dn = p;
                dn[i] -= 1e-6;
                let fd = (frozen(up) - frozen(dn)) / 2e-6;
                assert!(
                    (grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "corner {i} of {p:?}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = param_rng(22, "loss-fd");
        let mut out = blank_output(1, 2, 0.0);
        for s in &mut out.scales {
            s.cls.mapv_inplace(|_| rng.random_range(-2.0..2.0));
            // Equal offsets keep every predicted box square. With square
            // ground truth the aspect term and its gradient are both zero at
            // the expansion point, where the detached-weight gradient equals
            // the true one; the aspect gradient itself is covered by the
            // corner-level check above.
            s.reg.fill(0.08);
        }
        let targets = vec![vec![ann(0, 0.41, 0.37, 0.1, 0.1), ann(1, 0.6, 0.6, 0.4, 0.4)]];
        let (_, gcls, greg) = loss_and_grads(&out, &targets);

        let step = 1e-6;
        // probe the positive cell, a negative cell, and both positives' offsets
        let cls_probes = [(0usize, [0usize, 0, 2, 3]), (0, [0, 1, 2, 3]), (1, [0, 0, 1, 1]), (2, [0, 1, 1, 1])];
        for (k, idx) in cls_probes {
            let orig = out.scales[k].cls[idx];
            out.scales[k].cls[idx] = orig + step;
            let up = compute_loss(&out, &targets).total;
            out.scales[k].cls[idx] = orig - step;
            let dn = compute_loss(&out, &targets).total;
            out.scales[k].cls[idx] = orig;
            let fd = (up - dn) / (2.0 * step);
            let an = gcls[k][idx];
            assert!((an - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "cls {k} {idx:?}: {an} vs {fd}");
        }
        let reg_probes = [(0usize, [0usize, 0, 2, 3]), (0, [0, 3, 2, 3]), (2, [0, 1, 1, 1]), (2, [0, 2, 1, 1])];
        for (k, idx) in reg_probes {
            let orig = out.scales[k].reg[idx];
            out.scales[k].reg[idx] = orig + step;
            let up = compute_loss(&out, &targets).total;
            out.scales[k].reg[idx] = orig - step;
            let dn = compute_loss(&out, &targets).total;
            out.scales[k].reg[idx] = orig;
            let fd = (up - dn) / (2.0 * step);
            let an = greg[k][idx];
            assert!((an - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "reg {k} {idx:?}: {an} vs {fd}");
        }
    }
}
