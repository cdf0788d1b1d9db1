use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use fltrain_core::faultmodel::BitFlipModel;
use fltrain_core::{
    evaluate_topk, finetune, launch_accelerator, load_checkpoint, quantize_masters,
    save_checkpoint, write_results_csv, Checkpoint, CsvValue, FaultModel, ForwardSource,
};

use super::{ensure_out_dir, out_file};
use crate::config::{ExperimentConfig, FINETUNE_DEFAULTS};

/// What the sweep iterates over.
pub enum SweepAxis {
    /// SEU rates (per-MAC flip probabilities).
    Rates(Vec<f64>),
    /// Overclock frequencies in MHz; the fault section must be `overclock`.
    Freqs(Vec<f64>),
}

/// Accuracy sweep over fault intensity: for each point, the pre-trained
/// model is evaluated unretrained on the faulty device (mean over
/// `eval_seeds` distinct fault seeds), and with `--retrain` a fine-tuned
/// model is trained and evaluated the same way. One CSV row per point.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    from: &Path,
    axis: &SweepAxis,
    retrain: bool,
    eval_seeds: usize,
) -> Result<()> {
    if eval_seeds == 0 {
        bail!("--eval-seeds must be at least 1");
    }
    ensure_out_dir(&config.out_dir)?;
    let checkpoint = load_checkpoint(from)?;
    let eval_subset = config.train.eval_subset.unwrap_or(0);

    eprintln!("loading dataset...");
    let test = config.dataset.load_test()?.prefix(eval_subset);
    let train = if retrain { Some(config.dataset.load_train()?) } else { None };
    let weights = quantize_masters(&checkpoint.network, &checkpoint.masters)?;

    // Same seed list at every point: paired comparisons across the axis.
    let seeds: Vec<u64> = (0..eval_seeds as u64).map(|i| config.seed.wrapping_add(i)).collect();

    let clean = launch_accelerator(checkpoint.network.clone(), FaultModel::None, false, config.seed)?;
    let clean_baseline = evaluate_topk(
        &ForwardSource::Device { template: &clean, weights: &weights, fault_epoch: 0 },
        &test,
        1,
    )?;
    eprintln!("clean quantized baseline: {clean_baseline:.4}");

    let (axis_name, points, faults) = resolve_axis(config, axis)?;
    let mut rows: Vec<Vec<CsvValue>> = Vec::with_capacity(points.len());
    for (point, fault) in points.iter().zip(&faults) {
        let started = Instant::now();
        let (unre_mean, unre_std) = mean_accuracy(&checkpoint, &weights, fault, &test, &seeds)?;
        eprintln!(
            "{axis_name} {point}: unretrained {unre_mean:.4} (std {unre_std:.4}, {:.0}s)",
            started.elapsed().as_secs_f64()
        );

        let mut row = vec![
            CsvValue::Float(*point),
            CsvValue::Float(clean_baseline),
            CsvValue::Float(unre_mean),
            CsvValue::Float(unre_std),
        ];
        if retrain {
            let train = train.as_ref().expect("loaded when retraining");
            let device =
                launch_accelerator(checkpoint.network.clone(), fault.clone(), true, config.seed)?;
            let train_cfg = config.train_config(FINETUNE_DEFAULTS);
            let outcome = finetune(&checkpoint, device, train, &test, &train_cfg)?;
            let re_weights =
                quantize_masters(&outcome.checkpoint.network, &outcome.checkpoint.masters)?;
            let (re_mean, re_std) =
                mean_accuracy(&outcome.checkpoint, &re_weights, fault, &test, &seeds)?;
            let re_clean = evaluate_topk(
                &ForwardSource::Device { template: &clean, weights: &re_weights, fault_epoch: 0 },
                &test,
                1,
            )?;
            let label = format!("{point}").replace('.', "_");
            save_checkpoint(
                &outcome.checkpoint,
                &out_file(&config.out_dir, &format!("retrained_{axis_name}_{label}.flck")),
            )?;
            eprintln!(
                "{axis_name} {point}: retrained {re_mean:.4} (std {re_std:.4}), clean {re_clean:.4}"
            );
            row.extend([
                CsvValue::Float(re_mean),
                CsvValue::Float(re_std),
                CsvValue::Float(re_clean),
            ]);
        } else {
            row.extend([CsvValue::Empty, CsvValue::Empty, CsvValue::Empty]);
        }
        rows.push(row);
    }

    let header = [
        axis_name,
        "clean_baseline",
        "unretrained_accuracy",
        "unretrained_std",
        "retrained_accuracy",
        "retrained_std",
        "retrained_clean_accuracy",
    ];
    let csv_path = out_file(&config.out_dir, "sweep_results.csv");
    write_results_csv(&header, &rows, &csv_path)?;
    println!("sweep_csv {}", csv_path.display());
    Ok(())
}

fn resolve_axis(
    config: &ExperimentConfig,
    axis: &SweepAxis,
) -> Result<(&'static str, Vec<f64>, Vec<FaultModel>)> {
    match axis {
        SweepAxis::Rates(rates) => {
            if rates.is_empty() {
                bail!("--rates list is empty");
            }
            let (bit_low, bit_high) = config.seu_bit_range();
            let faults = rates
                .iter()
                .map(|&r| Ok(FaultModel::Seu(BitFlipModel::new(r, bit_low, bit_high)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(("rate", rates.clone(), faults))
        }
        SweepAxis::Freqs(freqs) => {
            if freqs.is_empty() {
                bail!("--freqs list is empty");
            }
            let (model, _) = config.overclock_model()?;
            let faults = freqs
                .iter()
                .map(|&f| FaultModel::Overclock { model, freq_mhz: f })
                .collect();
            Ok(("freq_mhz", freqs.clone(), faults))
        }
    }
}

fn mean_accuracy(
    checkpoint: &Checkpoint,
    weights: &[fltrain_core::LayerWeights],
    fault: &FaultModel,
    test: &fltrain_core::DatasetSplit,
    seeds: &[u64],
) -> Result<(f64, f64)> {
    let mut accs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let device = launch_accelerator(checkpoint.network.clone(), fault.clone(), false, seed)?;
        accs.push(evaluate_topk(
            &ForwardSource::Device { template: &device, weights, fault_epoch: 0 },
            test,
            1,
        )?);
    }
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let std = if accs.len() < 2 {
        0.0
    } else {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok((mean, std))
}
