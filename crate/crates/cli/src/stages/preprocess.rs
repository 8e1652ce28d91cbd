use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use radnas_core::rdmap::{
    adc_to_rd, read_adc, write_rdm, DatasetManifest, ManifestRecord, Split,
};

use super::StageCtx;
use crate::manifest::now_unix;

pub const COMMAND: &str = "preprocess";

/// Convert raw ADC captures into RD maps. Expects
/// `{adc_dir}/{split}/manifest.jsonl` whose records point at `.adc` files;
/// writes the same manifest shape with `.rdm` files under `out/data`.
pub fn run(ctx: &StageCtx) -> Result<()> {
    let Some(adc_root) = &ctx.config.dataset.adc_dir else {
        bail!("preprocess requires dataset.adc_dir (raw ADC capture root)");
    };
    if let Some(dir) = &ctx.config.dataset.dir {
        bail!(
            "dataset.dir ({}) would shadow the preprocessed dataset; unset one of dataset.dir, dataset.adc_dir",
            dir.display()
        );
    }
    if ctx.already_complete(COMMAND)? {
        return Ok(());
    }
    let started = now_unix();
    let data_dir = ctx.out.join("data");
    let mut artifacts: Vec<PathBuf> = Vec::new();
    let mut total = 0usize;
    for split in [Split::Train, Split::Val, Split::Test] {
        let src_manifest = adc_root.join(split.as_str()).join("manifest.jsonl");
        if !src_manifest.exists() {
            bail!("missing artifact {}; point dataset.adc_dir at a capture root", src_manifest.display());
        }
        let manifest = DatasetManifest::load(&src_manifest, split)?;
        let src_root = src_manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
        let dst_root = data_dir.join(split.as_str());
        let mut records = Vec::with_capacity(manifest.len());
        for record in &manifest.records {
            let cube = read_adc(&src_root.join(&record.rd))
                .with_context(|| format!("sample {}", record.sample_id))?;
            let rd = adc_to_rd(&cube)?;
            let rel = format!("rd/{}.rdm", record.sample_id);
            write_rdm(&dst_root.join(&rel), &rd)?;
            records.push(ManifestRecord {
                sample_id: record.sample_id.clone(),
                rd: rel,
                labels: record.labels.clone(),
            });
        }
        total += records.len();
        let out_manifest = dst_root.join("manifest.jsonl");
        DatasetManifest::new(records, split)?.save(&out_manifest)?;
        artifacts.push(out_manifest);
    }
    println!("preprocessed {total} ADC frames into {}", data_dir.display());
    ctx.finish(COMMAND, started, &artifacts)
}
