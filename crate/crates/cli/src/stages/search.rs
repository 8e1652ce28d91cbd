use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;

use radnas_core::detector::load_checkpoint;
use radnas_core::nas::{
    count_params, estimate_flops, evaluate_fitness, evolve_search, realize, space::save_gene,
    EvalContext,
};
use radnas_core::rdmap::Split;
use radnas_core::{Model, SearchConfig};

use super::StageCtx;
use crate::manifest::{now_unix, require_artifact, write_atomic};

pub const COMMAND: &str = "search";

pub fn gene_path(out: &std::path::Path, rank: usize) -> PathBuf {
    out.join("genes").join(format!("rank_{rank:02}.gene"))
}

pub fn run(ctx: &StageCtx) -> Result<()> {
    if ctx.already_complete(COMMAND)? {
        return Ok(());
    }
    let ckpt = ctx.out.join("supernet.ckpt");
    require_artifact(&ctx.out, &ckpt, &["train-supernet"])?;
    let train = ctx.load_split(Split::Train)?;
    let val = ctx.load_split(Split::Val)?;
    let started = now_unix();

    let mc = ctx.config.model_config()?;
    let space = ctx.config.search_space()?;
    let mut model = Model::<f32>::supernet(&mc, 0)?;
    load_checkpoint(&ckpt, &mut model)?;

    let s = &ctx.config.search;
    let batch = ctx.config.supernet.batch_size;
    let n_recalib = (s.recalib_batches * batch).min(train.len());
    let eval_ctx = EvalContext::<f32>::new(&train[..n_recalib], &val, batch);
    let (h, w) = (ctx.config.dataset.height, ctx.config.dataset.width);
    let search_cfg = SearchConfig {
        population: s.population,
        iterations: s.iterations,
        top_k: s.top_k,
        mutation_prob: s.mutation_prob,
        seed: ctx.config.seed.wrapping_add(2),
    };
    let max_params = s.max_params;
    println!(
        "searching: population {}, {} generations, {} recalibration batches, {} val samples",
        s.population,
        s.iterations,
        eval_ctx.recalib.len(),
        val.len()
    );
    let ranked = evolve_search(
        &space,
        &search_cfg,
        |g| {
            let r = realize(&space, g, &mc)?;
            Ok((count_params(&mc, &r), estimate_flops(&mc, &r, h, w)))
        },
        |g| {
            if max_params == 0 {
                return Ok(());
            }
            let r = realize(&space, g, &mc).map_err(|e| e.to_string())?;
            let p = count_params(&mc, &r);
            if p <= max_params {
                Ok(())
            } else {
                Err(format!("{p} parameters over the {max_params} budget"))
            }
        },
        |g| evaluate_fitness(&mut model, &space, g, &eval_ctx),
    )?;

    let mut csv = String::from("rank,gene_id,iteration,fitness,params,flops\n");
    for (i, c) in ranked.iter().enumerate() {
        writeln!(csv, "{},{},{},{},{},{}", i + 1, c.gene_id, c.iteration, c.fitness, c.params, c.flops)
            .expect("string write");
    }
    let log_path = ctx.out.join("search_log.csv");
    write_atomic(&log_path, csv.as_bytes())?;

    let keep = s.retrain_candidates.min(ranked.len());
    let mut artifacts = vec![log_path];
    for (i, c) in ranked.iter().take(keep).enumerate() {
        let path = gene_path(&ctx.out, i + 1);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        save_gene(&path, &space, &c.gene)?;
        artifacts.push(path);
    }
    let best = &ranked[0];
    println!(
        "evaluated {} architectures; best {} fitness {:.4} ({} params)",
        ranked.len(),
        best.gene_id,
        best.fitness,
        best.params
    );
    ctx.finish(COMMAND, started, &artifacts)
}
