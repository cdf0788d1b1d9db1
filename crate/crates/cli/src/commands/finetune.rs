use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use fltrain_core::{finetune, launch_accelerator, load_checkpoint, write_results_csv};

use super::{ensure_out_dir, log_rows, out_file, LOG_HEADER};
use crate::config::{ExperimentConfig, FINETUNE_DEFAULTS};

/// Accelerator-in-the-loop fine-tuning from a pre-trained checkpoint on the
/// configured faulty device. Writes `finetuned.flck` and
/// `finetune_log.csv`; prints baseline, final device accuracy and recovery.
pub fn cmd_finetune(config: &ExperimentConfig, from: &Path) -> Result<()> {
    ensure_out_dir(&config.out_dir)?;
    let start = load_checkpoint(from)?;
    let fault = config.fault_model()?;
    let train_cfg = config.train_config(FINETUNE_DEFAULTS);

    eprintln!("loading dataset...");
    let train = config.dataset.load_train()?;
    let test = config.dataset.load_test()?;

    let device = launch_accelerator(start.network.clone(), fault, true, config.seed)?;
    eprintln!(
        "fine-tuning on device [{}] for up to {} epochs",
        device.fault().describe(),
        train_cfg.max_epochs
    );
    let started = Instant::now();
    let out = finetune(&start, device, &train, &test, &train_cfg)?;
    eprintln!("finetune wall time: {:.1}s", started.elapsed().as_secs_f64());

    let ckpt_path = out_file(&config.out_dir, "finetuned.flck");
    fltrain_core::save_checkpoint(&out.checkpoint, &ckpt_path)?;
    write_results_csv(
        &LOG_HEADER,
        &log_rows(&out.log),
        &out_file(&config.out_dir, "finetune_log.csv"),
    )?;

    println!("baseline_accuracy {:.6}", out.baseline_accuracy);
    println!("device_accuracy {:.6}", out.final_device_accuracy);
    println!("early_stop_met {}", out.early_stop_met);
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}
