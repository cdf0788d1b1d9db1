use std::time::Instant;

use anyhow::Result;
use fltrain_core::{
    evaluate_topk, launch_accelerator, pretrain, quantize_masters, write_results_csv,
    Architecture, FaultModel, ForwardSource,
};

use super::{ensure_out_dir, log_rows, out_file, LOG_HEADER};
use crate::config::{ExperimentConfig, PRETRAIN_DEFAULTS};

/// Off-line float training plus fixed-point calibration. Writes
/// `checkpoint.flck` and `pretrain_log.csv`; prints float and clean
/// quantized accuracy.
pub fn cmd_pretrain(config: &ExperimentConfig) -> Result<()> {
    ensure_out_dir(&config.out_dir)?;
    let arch = Architecture::by_name(&config.network.arch)?;
    let train_cfg = config.train_config(PRETRAIN_DEFAULTS);

    eprintln!("loading dataset...");
    let train = config.dataset.load_train()?;
    let test = config.dataset.load_test()?;
    eprintln!("pretraining on {} samples for {} epochs", train.len(), train_cfg.max_epochs);

    let started = Instant::now();
    let out = pretrain(&arch, &train, &test, &train_cfg)?;
    eprintln!("pretrain wall time: {:.1}s", started.elapsed().as_secs_f64());

    // Clean quantized accuracy of the calibrated model on the device.
    let mut checkpoint = out.checkpoint;
    let clean = launch_accelerator(checkpoint.network.clone(), FaultModel::None, false, config.seed)?;
    let weights = quantize_masters(&checkpoint.network, &checkpoint.masters)?;
    let q_acc = evaluate_topk(
        &ForwardSource::Device { template: &clean, weights: &weights, fault_epoch: 0 },
        &test,
        1,
    )?;
    checkpoint.set_metadata("quantized_val_accuracy", format!("{q_acc:.6}"));

    let ckpt_path = out_file(&config.out_dir, "checkpoint.flck");
    fltrain_core::save_checkpoint(&checkpoint, &ckpt_path)?;
    write_results_csv(
        &LOG_HEADER,
        &log_rows(&out.log),
        &out_file(&config.out_dir, "pretrain_log.csv"),
    )?;

    println!("float_accuracy {:.6}", out.float_accuracy);
    println!("quantized_accuracy {q_acc:.6}");
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}
