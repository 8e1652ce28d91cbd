use anyhow::Result;

use radnas_core::detector::load_checkpoint;
use radnas_core::eval::write_metrics_csv;
use radnas_core::nas::{realize, space::load_gene};
use radnas_core::Model;

use super::{eval_model, StageCtx};
use crate::manifest::{now_unix, require_artifact, write_atomic};

pub const COMMAND: &str = "eval";

pub fn metrics_path(out: &std::path::Path, split: &str) -> std::path::PathBuf {
    out.join(format!("metrics_{split}.csv"))
}

pub fn run(ctx: &StageCtx) -> Result<()> {
    if ctx.already_complete(COMMAND)? {
        return Ok(());
    }
    let ckpt = ctx.out.join("best.ckpt");
    let gene_file = ctx.out.join("best.gene");
    require_artifact(&ctx.out, &ckpt, &["retrain-top"])?;
    require_artifact(&ctx.out, &gene_file, &["retrain-top"])?;
    let split = ctx.config.eval_split()?;
    let samples = ctx.load_split(split)?;
    let started = now_unix();

    let mc = ctx.config.model_config()?;
    let space = ctx.config.search_space()?;
    let gene = load_gene(&gene_file, &space)?;
    let r = realize(&space, &gene, &mc)?;
    let mut model = Model::<f32>::fixed(&mc, &r, 0)?;
    load_checkpoint(&ckpt, &mut model)?;

    let report = eval_model(&mut model, &samples, ctx.config.retrain.batch_size)?;
    let mut csv = Vec::new();
    write_metrics_csv(&report, split.as_str(), &mut csv)?;
    let out_path = metrics_path(&ctx.out, split.as_str());
    write_atomic(&out_path, &csv)?;
    println!(
        "{} ({} samples): mAP@50 {:.4}, mAP@[50:95] {:.4}",
        split.as_str(),
        samples.len(),
        report.map50(),
        report.map50_95
    );
    println!("metrics: {}", out_path.display());
    ctx.finish(COMMAND, started, &[out_path])
}
