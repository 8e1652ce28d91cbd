//! Pipeline stages. Each stage is idempotent: a completed stage without
//! `--force` reports its recorded artifacts and exits, and consumed
//! artifacts are hash-checked against the producing stage's manifest.

pub mod eval_cmd;
pub mod preprocess;
pub mod report;
pub mod retrain_top;
pub mod search;
pub mod synth;
pub mod train_supernet;

use std::path::PathBuf;

use anyhow::Result;

use radnas_core::detector::decode_batch;
use radnas_core::eval::{map_report, EvalSample};
use radnas_core::nas::EvalContext;
use radnas_core::nn::BnMode;
use radnas_core::rdmap::{Dataset, LoadedSample, Split};
use radnas_core::{Annotation, BBox, GroundTruth, MapReport, Model};

use crate::config::PipelineConfig;
use crate::manifest::{require_artifact, stage_complete, write_run_manifest};

pub struct StageCtx<'a> {
    pub config: &'a PipelineConfig,
    /// Resolved TOML text after `--set`; hashed and stored by every stage.
    pub config_text: &'a str,
    pub out: PathBuf,
    pub force: bool,
}

impl StageCtx<'_> {
    /// No-`--force` fast path: report the recorded artifacts and skip.
    pub fn already_complete(&self, command: &str) -> Result<bool> {
        if self.force {
            return Ok(false);
        }
        let Some(manifest) = stage_complete(&self.out, command)? else {
            return Ok(false);
        };
        println!("`{command}` already complete; existing artifacts:");
        for a in &manifest.artifacts {
            println!("  {}", self.out.join(&a.path).display());
        }
        println!("pass --force to rerun");
        Ok(true)
    }

    pub fn finish(&self, command: &str, started_unix: u64, artifacts: &[PathBuf]) -> Result<()> {
        write_run_manifest(&self.out, command, self.config_text, started_unix, artifacts)?;
        Ok(())
    }

    /// Load a whole split into memory, verifying the manifest against
    /// whichever dataset stage produced it.
    pub fn load_split(&self, split: Split) -> Result<Vec<LoadedSample>> {
        let root = self.config.data_root(&self.out);
        let manifest_path = root.join(split.as_str()).join("manifest.jsonl");
        require_artifact(&self.out, &manifest_path, &["synth", "preprocess"])?;
        let resize = Some((self.config.dataset.height, self.config.dataset.width));
        let dataset = Dataset::open(&manifest_path, split, resize)?;
        Ok(dataset.iter().collect::<Result<Vec<_>, _>>()?)
    }
}

fn truths_of(anns: &[Annotation]) -> Vec<GroundTruth> {
    anns.iter()
        .map(|a| GroundTruth {
            bbox: BBox::from_cxcywh_clamped(a.cx, a.cy, a.w, a.h)
                .expect("dataset annotations are validated on load"),
            class_id: a.class_id,
        })
        .collect()
}

/// Detection metrics for a fixed model over `samples`, batched forward in
/// eval mode with the model's own running statistics.
pub fn eval_model(
    model: &mut Model<f32>,
    samples: &[LoadedSample],
    batch_size: usize,
) -> Result<MapReport> {
    let ctx = EvalContext::<f32>::new(&[], samples, batch_size);
    let mut eval_samples = Vec::new();
    for (heat, gray, anns) in &ctx.val {
        let (out, _) = model.forward_full(heat, gray, BnMode::Eval)?;
        for (dets, a) in decode_batch(&out).into_iter().zip(anns) {
            eval_samples.push(EvalSample { detections: dets, truths: truths_of(a) });
        }
    }
    Ok(map_report(&eval_samples, model.config.num_classes))
}
