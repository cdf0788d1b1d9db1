use std::path::Path;

use anyhow::Result;
use fltrain_core::train::evaluate_topk_multi;
use fltrain_core::{
    launch_accelerator, load_checkpoint, quantize_masters, write_results_csv, CsvValue,
    ForwardSource,
};

use super::{ensure_out_dir, out_file};
use crate::config::ExperimentConfig;

/// Evaluate a checkpoint on the configured (possibly faulty) device.
/// With `repeats > 1`, each repeat runs under a distinct fault seed and the
/// spread is reported. For 10-class datasets the analog of the paper-scale
/// top-5 metric is reported as both top-1 and top-2.
pub fn cmd_eval(config: &ExperimentConfig, from: &Path, repeats: usize) -> Result<()> {
    if repeats == 0 {
        anyhow::bail!("--repeats must be at least 1");
    }
    ensure_out_dir(&config.out_dir)?;
    let checkpoint = load_checkpoint(from)?;
    let fault = config.fault_model()?;
    let eval_subset = config.train.eval_subset.unwrap_or(0);

    eprintln!("loading dataset...");
    let test = config.dataset.load_test()?.prefix(eval_subset);
    let weights = quantize_masters(&checkpoint.network, &checkpoint.masters)?;

    let ks = [1usize, 2];
    let mut rows: Vec<Vec<CsvValue>> = Vec::with_capacity(repeats);
    let mut top1 = Vec::with_capacity(repeats);
    let mut top2 = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let seed = config.seed.wrapping_add(r as u64);
        let device = launch_accelerator(checkpoint.network.clone(), fault.clone(), false, seed)?;
        let accs = evaluate_topk_multi(
            &ForwardSource::Device { template: &device, weights: &weights, fault_epoch: 0 },
            &test,
            &ks,
        )?;
        rows.push(vec![
            CsvValue::Int(r as i64),
            CsvValue::Int(seed as i64),
            CsvValue::Float(accs[0]),
            CsvValue::Float(accs[1]),
        ]);
        top1.push(accs[0]);
        top2.push(accs[1]);
        eprintln!("repeat {r}: top1 {:.4} top2 {:.4}", accs[0], accs[1]);
    }

    write_results_csv(
        &["repeat", "seed", "top1_accuracy", "top2_accuracy"],
        &rows,
        &out_file(&config.out_dir, "eval_results.csv"),
    )?;

    println!("samples {}", test.len());
    println!("fault {}", fault.describe());
    for (name, accs) in [("top1", &top1), ("top2", &top2)] {
        let (mean, std, min, max) = summary(accs);
        if repeats == 1 {
            println!("{name}_accuracy {mean:.6}");
        } else {
            println!("{name}_mean {mean:.6}");
            println!("{name}_std {std:.6}");
            println!("{name}_min {min:.6}");
            println!("{name}_max {max:.6}");
        }
    }
    Ok(())
}

fn summary(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, std, min, max)
}
