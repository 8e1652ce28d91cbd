use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{RDMap, RawADCCube, RdmapError};

/// Amplitude floor keeping the dB conversion finite on zero cells.
const DB_EPSILON: f64 = 1e-12;

/// Transform a raw ADC frame into an RD map.
///
/// A DFT along fast time produces range bins, a DFT along slow time
/// produces Doppler bins, and the Doppler axis is center-shifted so zero
/// velocity sits at bin `doppler_bins / 2`. Output cells are
/// `20*log10(|X| + 1e-12)` dB, shaped `[range_bins, doppler_bins]` with
/// `range_bins = fast_time_samples` and `doppler_bins = chirps`.
pub fn adc_to_rd(cube: &RawADCCube) -> Result<RDMap, RdmapError> {
    let chirps = cube.chirps();
    let samples = cube.fast_time_samples();

    let mut planner = FftPlanner::<f64>::new();
    let range_fft = planner.plan_fft_forward(samples);
    let doppler_fft = planner.plan_fft_forward(chirps);

    // range DFT per chirp
    let mut stage = Array2::<Complex64>::zeros((chirps, samples));
    let mut row_buf = vec![Complex64::new(0.0, 0.0); samples];
    for c in 0..chirps {
        for s in 0..samples {
            row_buf[s] = cube.samples()[[c, s]];
        }
        range_fft.process(&mut row_buf);
        for s in 0..samples {
            stage[[c, s]] = row_buf[s];
        }
    }

    // Doppler DFT per range bin, then center shift
    let shift = (chirps + 1) / 2;
    let mut out = Array2::<f32>::zeros((samples, chirps));
    let mut col_buf = vec![Complex64::new(0.0, 0.0); chirps];
    for s in 0..samples {
        for c in 0..chirps {
            col_buf[c] = stage[[c, s]];
        }
        doppler_fft.process(&mut col_buf);
        for d in 0..chirps {
            let v = col_buf[(d + shift) % chirps];
            out[[s, d]] = (20.0 * (v.norm() + DB_EPSILON).log10()) as f32;
        }
    }

    RDMap::new(out)
}

/// Min-max normalize an RD map into a `[1, H, W]` grayscale tensor.
///
/// A constant map normalizes to all zeros.
pub fn to_grayscale(rd: &RDMap) -> Array3<f32> {
    let (h, w) = rd.intensity().dim();
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in rd.intensity().iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut out = Array3::<f32>::zeros((1, h, w));
    if hi > lo {
        let inv = 1.0 / (hi - lo);
        for ((r, c), &v) in rd.intensity().indexed_iter() {
            out[[0, r, c]] = (v - lo) * inv;
        }
    }
    out
}

/// Anchor points of the pseudo-color map: normalized value to RGB.
const LUT_ANCHORS: [(f32, [f32; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.125, [0.0, 0.0, 1.0]),
    (0.375, [0.0, 1.0, 1.0]),
    (0.625, [1.0, 1.0, 0.0]),
    (0.875, [1.0, 0.0, 0.0]),
    (1.0, [0.5, 0.0, 0.0]),
];

/// Map one normalized value in [0,1] through the piecewise-linear
/// pseudo-color table.
pub fn heatmap_lut(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    for i in 0..LUT_ANCHORS.len() - 1 {
        let (x0, c0) = LUT_ANCHORS[i];
        let (x1, c1) = LUT_ANCHORS[i + 1];
        if v <= x1 {
            let t = (v - x0) / (x1 - x0);
            return [
                c0[0] + t * (c1[0] - c0[0]),
                c0[1] + t * (c1[1] - c0[1]),
                c0[2] + t * (c1[2] - c0[2]),
            ];
        }
    }
    LUT_ANCHORS[LUT_ANCHORS.len() - 1].1
}

/// Encode an RD map as a `[3, H, W]` pseudo-color heatmap tensor.
///
/// Values are min-max normalized exactly as in [`to_grayscale`], then
/// pushed through the fixed LUT; a constant map renders as the LUT color
/// at 0.
pub fn to_heatmap(rd: &RDMap) -> Array3<f32> {
    let gray = to_grayscale(rd);
    let (_, h, w) = gray.dim();
    let mut out = Array3::<f32>::zeros((3, h, w));
    for r in 0..h {
        for c in 0..w {
            let rgb = heatmap_lut(gray[[0, r, c]]);
            for ch in 0..3 {
                out[[ch, r, c]] = rgb[ch];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn rd_from(values: Array2<f32>) -> RDMap {
        RDMap::new(values).unwrap()
    }

    #[test]
    fn all_zero_cube_hits_epsilon_floor() {
        let cube = RawADCCube::new(Array2::from_elem((4, 8), Complex64::new(0.0, 0.0))).unwrap();
        let rd = adc_to_rd(&cube).unwrap();
        assert_eq!(rd.range_bins(), 8);
        assert_eq!(rd.doppler_bins(), 4);
        for &v in rd.intensity().iter() {
            assert!((v - (-240.0)).abs() < 1e-4, "expected -240 dB, got {v}");
        }
    }

    #[test]
    fn dc_cube_peaks_at_range_zero_doppler_center() {
        let cube = RawADCCube::new(Array2::from_elem((8, 16), Complex64::new(1.0, 0.0))).unwrap();
        let rd = adc_to_rd(&cube).unwrap();
        let mut peak = (0, 0);
        let mut best = f32::NEG_INFINITY;
        for ((r, d), &v) in rd.intensity().indexed_iter() {
            if v > best {
                best = v;
                peak = (r, d);
            }
        }
        assert_eq!(peak, (0, 8 / 2));
    }

    #[test]
    fn pure_tone_peaks_at_its_range_bin() {
        // fast-time complex exponential at bin k, constant over chirps
        let (chirps, samples, k) = (4, 16, 5);
        let cube = RawADCCube::new(Array2::from_shape_fn((chirps, samples), |(_, s)| {
            let ph = 2.0 * std::f64::consts::PI * (k as f64) * (s as f64) / (samples as f64);
            Complex64::new(ph.cos(), ph.sin())
        }))
        .unwrap();
        let rd = adc_to_rd(&cube).unwrap();
        // column max over range bins must sit at bin k for the center Doppler column
        let center = chirps / 2;
        let mut best_r = 0;
        let mut best = f32::NEG_INFINITY;
        for r in 0..samples {
            if rd.intensity()[[r, center]] > best {
                best = rd.intensity()[[r, center]];
                best_r = r;
            }
        }
        assert_eq!(best_r, k);
    }

    /// Naive O(n^2) 2-D DFT oracle: range DFT over fast time, Doppler DFT
    /// over slow time, center shift, dB. Mirrors the contract, not the code.
    fn oracle_rd(cube: &RawADCCube) -> Array2<f32> {
        let (chirps, samples) = cube.samples().dim();
        let mut out = Array2::<f32>::zeros((samples, chirps));
        let shift = (chirps + 1) / 2;
        for r in 0..samples {
            for d_out in 0..chirps {
                let d = (d_out + shift) % chirps;
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..chirps {
                    for s in 0..samples {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((r * s) as f64 / samples as f64 + (d * c) as f64 / chirps as f64);
                        acc += cube.samples()[[c, s]] * Complex64::new(ph.cos(), ph.sin());
                    }
                }
                out[[r, d_out]] = (20.0 * (acc.norm() + 1e-12).log10()) as f32;
            }
        }
        out
    }

    #[test]
    fn matches_direct_dft_oracle() {
        let mut rng_state = 0x9e37_79b9_u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for &(chirps, samples) in &[(2usize, 2usize), (3, 5), (8, 16), (16, 12)] {
            let cube = RawADCCube::new(Array2::from_shape_fn((chirps, samples), |_| {
                Complex64::new(next(), next())
            }))
            .unwrap();
            let got = adc_to_rd(&cube).unwrap();
            let want = oracle_rd(&cube);
            for ((r, d), &w) in want.indexed_iter() {
                let g = got.intensity()[[r, d]];
                assert!(
                    (g - w).abs() < 1e-3,
                    "({chirps}x{samples}) cell ({r},{d}): got {g}, oracle {w}"
                );
            }
        }
    }

    #[test]
    fn grayscale_endpoints() {
        let mut m = Array2::zeros((3, 3));
        m[[0, 0]] = -10.0;
        m[[2, 2]] = 30.0;
        let g = to_grayscale(&rd_from(m));
        assert_eq!(g[[0, 0, 0]], 0.0);
        assert_eq!(g[[0, 2, 2]], 1.0);
        for &v in g.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn constant_map_normalizes_to_zero() {
        let g = to_grayscale(&rd_from(Array2::from_elem((4, 4), 7.5)));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lut_anchor_and_midpoint_values() {
        assert_eq!(heatmap_lut(0.0), [0.0, 0.0, 0.5]);
        // midpoint between the anchors at 0.375 and 0.625
        assert_eq!(heatmap_lut(0.5), [0.5, 1.0, 0.5]);
        assert_eq!(heatmap_lut(1.0), [0.5, 0.0, 0.0]);
    }

    #[test]
    fn constant_map_heatmap_is_lut_at_zero() {
        let h = to_heatmap(&rd_from(Array2::from_elem((2, 5), -3.0)));
        for r in 0..2 {
            for c in 0..5 {
                assert_eq!(h[[0, r, c]], 0.0);
                assert_eq!(h[[1, r, c]], 0.0);
                assert_eq!(h[[2, r, c]], 0.5);
            }
        }
    }
}
