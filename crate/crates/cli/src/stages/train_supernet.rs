use std::fmt::Write as _;

use anyhow::Result;

use radnas_core::detector::{save_checkpoint, train_supernet, CheckpointMeta};
use radnas_core::rdmap::Split;
use radnas_core::Model;

use super::StageCtx;
use crate::manifest::{now_unix, write_atomic};

pub const COMMAND: &str = "train-supernet";

pub fn run(ctx: &StageCtx) -> Result<()> {
    if ctx.already_complete(COMMAND)? {
        return Ok(());
    }
    let train = ctx.load_split(Split::Train)?;
    let started = now_unix();
    let mc = ctx.config.model_config()?;
    let space = ctx.config.search_space()?;
    let hyper = ctx.config.supernet_hyper();
    let mut model = Model::<f32>::supernet(&mc, hyper.seed)?;
    println!(
        "training supernet: {} samples, {} epochs, batch {}, {} parameters",
        train.len(),
        hyper.epochs,
        hyper.batch_size,
        model.params.total_elements()
    );
    let log = train_supernet(&mut model, &space, &train, &hyper)?;

    let mut csv = String::from("step,epoch,loss,cls_loss,box_loss\n");
    for row in &log {
        writeln!(csv, "{},{},{},{},{}", row.step, row.epoch, row.loss, row.cls_loss, row.box_loss)
            .expect("string write");
    }
    let log_path = ctx.out.join("supernet_train.csv");
    write_atomic(&log_path, csv.as_bytes())?;

    let ckpt_path = ctx.out.join("supernet.ckpt");
    let meta = CheckpointMeta {
        config_hash: mc.config_hash(),
        gene: None,
        epoch: hyper.epochs,
        seed: hyper.seed,
    };
    save_checkpoint(&ckpt_path, &model, &meta)?;
    if let Some(last) = log.last() {
        println!("final step loss {:.4} (cls {:.4}, box {:.4})", last.loss, last.cls_loss, last.box_loss);
    }
    println!("checkpoint: {}", ckpt_path.display());
    ctx.finish(COMMAND, started, &[ckpt_path, log_path])
}
