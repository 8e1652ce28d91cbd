use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};

use radnas_core::detector::{save_checkpoint, train_fixed, CheckpointMeta};
use radnas_core::nas::{count_params, estimate_flops, realize, space::load_gene};
use radnas_core::rdmap::Split;
use radnas_core::Model;

use super::{eval_model, StageCtx};
use crate::manifest::{now_unix, require_artifact, write_atomic};
use crate::stages::search::gene_path;

pub const COMMAND: &str = "retrain-top";

/// Retrain the top searched genes from scratch and keep the one with the
/// best validation mAP@50.
pub fn run(ctx: &StageCtx) -> Result<()> {
    if ctx.already_complete(COMMAND)? {
        return Ok(());
    }
    let first_gene = gene_path(&ctx.out, 1);
    require_artifact(&ctx.out, &first_gene, &["search"])?;

    let train = ctx.load_split(Split::Train)?;
    let val = ctx.load_split(Split::Val)?;
    let started = now_unix();

    let mc = ctx.config.model_config()?;
    let space = ctx.config.search_space()?;
    let (h, w) = (ctx.config.dataset.height, ctx.config.dataset.width);

    let mut rows: Vec<(usize, String, usize, u64, f64)> = Vec::new();
    let mut ckpts: Vec<PathBuf> = Vec::new();
    for rank in 1..=ctx.config.search.retrain_candidates {
        let gene_file = gene_path(&ctx.out, rank);
        if rank > 1 && !gene_file.exists() {
            // The search deduplicated down to fewer genes than requested.
            break;
        }
        require_artifact(&ctx.out, &gene_file, &["search"])?;
        let gene = load_gene(&gene_file, &space)?;
        let r = realize(&space, &gene, &mc)?;
        let hyper = ctx.config.retrain_hyper(rank);
        let mut model = Model::<f32>::fixed(&mc, &r, hyper.seed)?;
        println!(
            "retraining rank {rank} ({} params) for {} epochs",
            model.params.total_elements(),
            hyper.epochs
        );
        train_fixed(&mut model, &train, &hyper)?;
        let report = eval_model(&mut model, &val, hyper.batch_size)?;
        let map50 = report.map50();
        println!("rank {rank} val mAP@50 {map50:.4}");

        let ckpt = ctx.out.join("retrained").join(format!("rank_{rank:02}.ckpt"));
        if let Some(dir) = ckpt.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let meta = CheckpointMeta {
            config_hash: mc.config_hash(),
            gene: Some(gene.choices.clone()),
            epoch: hyper.epochs,
            seed: hyper.seed,
        };
        save_checkpoint(&ckpt, &model, &meta)?;
        rows.push((
            rank,
            gene.gene_hash(),
            count_params(&mc, &r),
            estimate_flops(&mc, &r, h, w),
            map50,
        ));
        ckpts.push(ckpt);
    }
    if rows.is_empty() {
        bail!("no searched genes to retrain under {}", ctx.out.join("genes").display());
    }

    let mut csv = String::from("rank,gene_id,params,flops,val_map50\n");
    for (rank, gene_id, params, flops, map50) in &rows {
        writeln!(csv, "{rank},{gene_id},{params},{flops},{map50}").expect("string write");
    }
    let summary_path = ctx.out.join("retrain_summary.csv");
    write_atomic(&summary_path, csv.as_bytes())?;

    // Best by val mAP@50; ties keep the better search rank.
    let best = rows
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.4.total_cmp(&b.4).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("rows is non-empty");
    let best_rank = rows[best].0;
    let best_ckpt = ctx.out.join("best.ckpt");
    let best_gene = ctx.out.join("best.gene");
    std::fs::copy(&ckpts[best], &best_ckpt)?;
    std::fs::copy(gene_path(&ctx.out, best_rank), &best_gene)?;
    println!("best: rank {best_rank} (val mAP@50 {:.4}) -> {}", rows[best].4, best_ckpt.display());

    let mut artifacts = ckpts;
    artifacts.push(summary_path);
    artifacts.push(best_ckpt);
    artifacts.push(best_gene);
    ctx.finish(COMMAND, started, &artifacts)
}
