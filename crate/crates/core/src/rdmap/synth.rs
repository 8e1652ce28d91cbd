use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::format::write_rdm;
use super::{DatasetManifest, ManifestLabel, ManifestRecord, RDMap, RdmapError, Split};

/// Half-extent of the half-intensity contour of a Gaussian, in sigmas:
/// sqrt(2 ln 2).
const HALF_CONTOUR: f64 = 1.177_410_022_515_474_7;
/// Minimum clearance in bins between any box edge and the map border.
const EDGE_MARGIN: f64 = 1.0;
/// Minimum clearance in bins between boxes of the same map.
const BLOB_GAP: f64 = 1.0;
const PLACEMENT_RETRIES: usize = 40;

/// Parameters of the synthetic RD dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Range bins per map.
    pub height: usize,
    /// Doppler bins per map.
    pub width: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Uniform SNR range in dB for blob peaks over the noise scale.
    pub snr_db: (f64, f64),
    /// Rayleigh scale of the amplitude noise floor.
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            train: 500,
            val: 100,
            test: 100,
            num_classes: 2,
            min_objects: 1,
            max_objects: 3,
            snr_db: (10.0, 25.0),
            noise_sigma: 1.0,
        }
    }
}

/// Per-split manifests produced by one generator run, plus the realized
/// per-class object tally.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
    pub class_counts: Vec<usize>,
}

/// Sigma ranges `((range_lo, range_hi), (doppler_lo, doppler_hi))` for one
/// class. Even classes spread along Doppler, odd ones along range; every
/// full cycle through the pair grows the family by 25%.
fn shape_family(class_id: usize) -> ((f64, f64), (f64, f64)) {
    let scale = 1.0 + 0.25 * (class_id / 2) as f64;
    let narrow = (1.2 * scale, 2.0 * scale);
    let wide = (3.2 * scale, 5.0 * scale);
    if class_id % 2 == 0 {
        (narrow, wide)
    } else {
        (wide, narrow)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

impl SynthConfig {
    fn max_half_extent(&self) -> f64 {
        (0..self.num_classes)
            .map(|c| {
                let ((_, sr_hi), (_, sd_hi)) = shape_family(c);
                HALF_CONTOUR * sr_hi.max(sd_hi)
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), RdmapError> {
        let fail = |msg: String| Err(RdmapError::BadSynthConfig(msg));
        if self.train + self.val + self.test == 0 {
            return fail("zero samples requested".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be at least 1".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(format!(
                "objects per map must satisfy 1 <= min <= max, got {}..{}",
                self.min_objects, self.max_objects
            ));
        }
        if !self.snr_db.0.is_finite() || !self.snr_db.1.is_finite() || self.snr_db.0 > self.snr_db.1
        {
            return fail(format!("bad SNR range {:?}", self.snr_db));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return fail(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        let need = 2.0 * (EDGE_MARGIN + self.max_half_extent());
        let fit = self.height.min(self.width) as f64;
        if fit <= need {
            return fail(format!(
                "map {}x{} too small for the largest blob family (needs > {need:.1} bins)",
                self.height, self.width
            ));
        }
        Ok(())
    }
}

/// Generate the synthetic dataset under `out_dir`, one directory per
/// split, each holding `manifest.jsonl` and its `rd/*.rdm` files.
///
/// Every sample is drawn from its own stream seeded by `(seed, split,
/// index)`, so a fixed seed reproduces every file byte for byte.
pub fn synth_generate(
    config: &SynthConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<SynthOutput, RdmapError> {
    config.validate()?;
    let mut class_counts = vec![0usize; config.num_classes];
    let splits = [
        (Split::Train, config.train),
        (Split::Val, config.val),
        (Split::Test, config.test),
    ];
    let mut manifests = Vec::with_capacity(3);
    for (split_no, (split, count)) in splits.into_iter().enumerate() {
        let split_dir = out_dir.join(split.as_str());
        let mut records = Vec::with_capacity(count);
        for idx in 0..count {
            let sample_seed =
                splitmix64(seed ^ (((split_no as u64) + 1) << 56) ^ (idx as u64));
            let (rd, labels) = generate_sample(config, sample_seed, &mut class_counts);
            let sample_id = format!("{}_{idx:05}", split.as_str());
            let rel = format!("rd/{sample_id}.rdm");
            write_rdm(&split_dir.join(&rel), &rd)?;
            records.push(ManifestRecord { sample_id, rd: rel, labels });
        }
        let manifest = DatasetManifest::new(records, split)?;
        manifest.save(&split_dir.join("manifest.jsonl"))?;
        manifests.push(manifest);
    }
    let mut it = manifests.into_iter();
    Ok(SynthOutput {
        train: it.next().unwrap(),
        val: it.next().unwrap(),
        test: it.next().unwrap(),
        class_counts,
    })
}

fn generate_sample(
    config: &SynthConfig,
    seed: u64,
    class_counts: &mut [usize],
) -> (RDMap, Vec<ManifestLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (config.height, config.width);

    // Rayleigh amplitude floor via inverse-CDF on one uniform per cell.
    let mut amp = Array2::<f64>::zeros((h, w));
    for v in amp.iter_mut() {
        let u: f64 = rng.random();
        *v = config.noise_sigma * (-2.0 * (1.0 - u).ln()).sqrt();
    }

    let n_objects = rng.random_range(config.min_objects..=config.max_objects);
    let mut placed: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_objects {
        let class_id = rng.random_range(0..config.num_classes);
        let ((sr_lo, sr_hi), (sd_lo, sd_hi)) = shape_family(class_id);
        let sigma_r = uniform(&mut rng, sr_lo, sr_hi);
        let sigma_d = uniform(&mut rng, sd_lo, sd_hi);
        let snr_db = uniform(&mut rng, config.snr_db.0, config.snr_db.1);
        let peak = config.noise_sigma * 10f64.powf(snr_db / 20.0);
        let (half_r, half_d) = (HALF_CONTOUR * sigma_r, HALF_CONTOUR * sigma_d);

        for _ in 0..PLACEMENT_RETRIES {
            let r_c = uniform(&mut rng, EDGE_MARGIN + half_r, h as f64 - EDGE_MARGIN - half_r);
            let d_c = uniform(&mut rng, EDGE_MARGIN + half_d, w as f64 - EDGE_MARGIN - half_d);
            let clear = placed.iter().all(|&(pr, pd, phr, phd)| {
                (r_c - pr).abs() >= half_r + phr + BLOB_GAP
                    || (d_c - pd).abs() >= half_d + phd + BLOB_GAP
            });
            if !clear {
                continue;
            }
            for r in 0..h {
                let dr = (r as f64 + 0.5) - r_c;
                let er = -(dr * dr) / (2.0 * sigma_r * sigma_r);
                for d in 0..w {
                    let dd = (d as f64 + 0.5) - d_c;
                    amp[[r, d]] += peak * (er - (dd * dd) / (2.0 * sigma_d * sigma_d)).exp();
                }
            }
            placed.push((r_c, d_c, half_r, half_d));
            labels.push(ManifestLabel {
                cls: class_id,
                cx: d_c / w as f64,
                cy: r_c / h as f64,
                w: 2.0 * half_d / w as f64,
                h: 2.0 * half_r / h as f64,
            });
            class_counts[class_id] += 1;
            break;
        }
        // an object that finds no clear spot is dropped, not an error
    }

    let db = amp.mapv(|a| (20.0 * (a + 1e-12).log10()) as f32);
    (RDMap::new(db).expect("finite by construction"), labels)
}
