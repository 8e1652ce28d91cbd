use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use radnas_core::rdmap::{DatasetManifest, Split};

use super::StageCtx;
use crate::manifest::{now_unix, require_artifact, write_atomic};
use crate::stages::eval_cmd::metrics_path;

pub const COMMAND: &str = "report";

/// Split a CSV produced by an earlier stage into rows, keeping the value
/// strings verbatim so the report inherits their determinism.
fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    if rows.is_empty() {
        bail!("{} is empty", path.display());
    }
    rows.remove(0);
    Ok(rows)
}

pub fn run(ctx: &StageCtx) -> Result<()> {
    if ctx.already_complete(COMMAND)? {
        return Ok(());
    }
    let search_log = ctx.out.join("search_log.csv");
    let retrain_summary = ctx.out.join("retrain_summary.csv");
    let split = ctx.config.eval_split()?;
    let metrics = metrics_path(&ctx.out, split.as_str());
    require_artifact(&ctx.out, &search_log, &["search"])?;
    require_artifact(&ctx.out, &retrain_summary, &["retrain-top"])?;
    require_artifact(&ctx.out, &metrics, &["eval"])?;
    let started = now_unix();

    let mut rows: Vec<(String, String, String)> = Vec::new();
    let push = |rows: &mut Vec<(String, String, String)>, s: &str, k: &str, v: String| {
        rows.push((s.to_string(), k.to_string(), v));
    };

    let data_root = ctx.config.data_root(&ctx.out);
    for s in [Split::Train, Split::Val, Split::Test] {
        let manifest_path = data_root.join(s.as_str()).join("manifest.jsonl");
        require_artifact(&ctx.out, &manifest_path, &["synth", "preprocess"])?;
        let manifest = DatasetManifest::load(&manifest_path, s)?;
        push(&mut rows, "dataset", &format!("{}_size", s.as_str()), manifest.len().to_string());
    }

    let train_log = ctx.out.join("supernet_train.csv");
    if train_log.exists() {
        require_artifact(&ctx.out, &train_log, &["train-supernet"])?;
        let log = read_csv(&train_log)?;
        if let Some(last) = log.last() {
            // step,epoch,loss,cls_loss,box_loss
            push(&mut rows, "supernet", "steps", last[0].clone());
            push(&mut rows, "supernet", "final_loss", last[2].clone());
        }
    }

    // rank,gene_id,iteration,fitness,params,flops — ranked best first.
    let search_rows = read_csv(&search_log)?;
    push(&mut rows, "search", "evaluated", search_rows.len().to_string());
    let best = &search_rows[0];
    push(&mut rows, "search", "best_gene_id", best[1].clone());
    push(&mut rows, "search", "best_fitness", best[3].clone());
    push(&mut rows, "search", "best_params", best[4].clone());
    push(&mut rows, "search", "best_flops", best[5].clone());

    // rank,gene_id,params,flops,val_map50.
    let retrain_rows = read_csv(&retrain_summary)?;
    for row in &retrain_rows {
        push(&mut rows, "retrain", &format!("rank{}_val_map50", row[0]), row[4].clone());
    }
    let best = retrain_rows
        .iter()
        .max_by(|a, b| {
            let fa: f64 = a[4].parse().unwrap_or(f64::NEG_INFINITY);
            let fb: f64 = b[4].parse().unwrap_or(f64::NEG_INFINITY);
            let ra: usize = a[0].parse().unwrap_or(usize::MAX);
            let rb: usize = b[0].parse().unwrap_or(usize::MAX);
            fa.total_cmp(&fb).then(rb.cmp(&ra))
        })
        .expect("retrain summary is non-empty");
    push(&mut rows, "retrain", "best_rank", best[0].clone());
    push(&mut rows, "retrain", "best_gene_id", best[1].clone());
    push(&mut rows, "retrain", "best_params", best[2].clone());

    // split,class,threshold,AP.
    for row in &read_csv(&metrics)? {
        push(&mut rows, "eval", &format!("{}/{}/{}", row[0], row[1], row[2]), row[3].clone());
    }

    let mut csv = String::from("section,key,value\n");
    for (s, k, v) in &rows {
        writeln!(csv, "{s},{k},{v}").expect("string write");
    }
    let report_path = ctx.out.join("report.csv");
    write_atomic(&report_path, csv.as_bytes())?;
    println!("report: {} ({} rows)", report_path.display(), rows.len());
    ctx.finish(COMMAND, started, &[report_path])
}
