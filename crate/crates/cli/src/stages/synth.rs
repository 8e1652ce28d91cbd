use std::path::PathBuf;

use anyhow::{bail, Result};

use radnas_core::rdmap::{synth_generate, Split};

use super::StageCtx;
use crate::manifest::now_unix;

pub const COMMAND: &str = "synth";

pub fn run(ctx: &StageCtx) -> Result<()> {
    if let Some(dir) = &ctx.config.dataset.dir {
        bail!(
            "dataset.dir ({}) points at an existing dataset; unset it to synthesize one",
            dir.display()
        );
    }
    if ctx.config.dataset.adc_dir.is_some() {
        bail!("dataset.adc_dir is set; `radnas preprocess` owns the data directory");
    }
    if ctx.already_complete(COMMAND)? {
        return Ok(());
    }
    let started = now_unix();
    let data_dir = ctx.out.join("data");
    let output = synth_generate(&ctx.config.synth_config(), ctx.config.seed, &data_dir)?;
    println!(
        "synthesized {} train / {} val / {} test maps at {}x{} under {}",
        output.train.len(),
        output.val.len(),
        output.test.len(),
        ctx.config.dataset.height,
        ctx.config.dataset.width,
        data_dir.display()
    );
    println!("objects per class: {:?}", output.class_counts);
    let artifacts: Vec<PathBuf> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|s| data_dir.join(s.as_str()).join("manifest.jsonl"))
        .collect();
    ctx.finish(COMMAND, started, &artifacts)
}
