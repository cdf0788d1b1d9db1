//! Off-line pre-training and accelerator-in-the-loop fine-tuning.
//!
//! Fine-tuning iterates: quantize the master weights, transfer them with a
//! batch of inputs to the device, run the fixed-point forward pass with
//! fault injection, read all layer outputs back, dequantize, backpropagate
//! in float on the host, and update the masters. Training stops early once
//! device accuracy reaches the configured fraction of the clean quantized
//! baseline.

use rayon::prelude::*;

use crate::accelsim::{
    launch_accelerator, DeviceHandle, DeviceTimeModel, LayerDescriptor, NetworkDescriptor,
};
use crate::data::DatasetSplit;
use crate::faultmodel::{FaultModel, RngStream, StreamId};
use crate::qformat::{calibrate_format, dequantize, FloatTensor, QFormat};
use crate::train::arch::{architecture_of, ArchLayer, Architecture};
use crate::train::float_net::{
    backward, float_forward, loss_and_grad, Activations, MasterWeights, Sgd,
};
use crate::train::runner::{
    evaluate_topk, quantize_masters, run_training_batch, ForwardSource, EVAL_EPOCH_BASE,
};
use crate::train::{Checkpoint, TrainConfig, TrainError};

/// Stream tags for the driver-level randomness (shuffling), separated from
/// per-layer fault streams by the layer field.
const SHUFFLE_STREAM: u32 = u32::MAX;

/// Default device clock for the training-time report when the fault model
/// carries no frequency of its own.
pub const DEFAULT_CLOCK_MHZ: f64 = 210.0;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: f64,
    /// Most recent validation accuracy (top-1).
    pub val_accuracy: f64,
    /// Bytes moved host->device this iteration (weights + batch inputs).
    pub bytes_to_device: u64,
    /// Bytes moved device->host this iteration (per-layer outputs).
    pub bytes_from_device: u64,
    /// Modeled device time for this iteration: transfers plus MAC compute
    /// at the device clock. Modeled (not wall) time keeps logs
    /// reproducible; wall time goes to stderr, never into artifacts.
    pub elapsed_ms: f64,
}

/// Everything fine-tuning produces beyond the checkpoint itself.
#[derive(Debug)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<IterationRecord>,
    /// True only if the last device evaluation met the early-stop target.
    pub early_stop_met: bool,
    /// Clean (fault-free) quantized accuracy of the starting checkpoint.
    pub baseline_accuracy: f64,
    /// Last device accuracy measured during fine-tuning.
    pub final_device_accuracy: f64,
}

/// Result of pre-training: the calibrated checkpoint and its training log.
#[derive(Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<IterationRecord>,
    pub float_accuracy: f64,
}

/// Off-line float training from random initialization, followed by
/// fixed-point calibration of every layer from the trained weights and a
/// batch of activation statistics.
pub fn pretrain(
    arch: &Architecture,
    train: &DatasetSplit,
    val: &DatasetSplit,
    config: &TrainConfig,
) -> Result<PretrainOutcome, TrainError> {
    config.validate()?;
    arch.shape_flow()?;
    if train.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let mut masters = MasterWeights::init(arch, config.seed);
    let mut sgd = Sgd::new(arch, config.learning_rate, config.momentum);
    let eval_split = val.prefix(config.eval_subset);
    let sample_shape = arch.input_shape.to_vec();

    let mut log = Vec::new();
    let mut iteration = 0u64;
    let mut last_val =
        evaluate_topk(&ForwardSource::Float { arch, weights: &masters }, &eval_split, 1)?;
    for epoch in 0..config.max_epochs {
        let order = shuffled_indices(train.len(), config.seed, epoch as u64);
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, MasterWeights), TrainError>> = batch
                .par_iter()
                .map(|&idx| {
                    let x = FloatTensor::new(sample_shape.clone(), train.image(idx).to_vec())?;
                    let acts = float_forward(arch, &masters, &x)?;
                    let (loss, dlogits) =
                        loss_and_grad(acts.logits(), train.labels[idx] as usize)?;
                    let grads = backward(arch, &masters, &acts, &dlogits)?;
                    Ok((loss, grads))
                })
                .collect();
            let (loss, grads) = reduce_batch(results, batch.len())?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { iteration });
            }
            sgd.step(&mut masters, &grads)?;
            iteration += 1;
            if iteration % config.eval_interval as u64 == 0 {
                last_val = evaluate_topk(
                    &ForwardSource::Float { arch, weights: &masters },
                    &eval_split,
                    1,
                )?;
            }
            log.push(IterationRecord {
                iteration,
                loss,
                val_accuracy: last_val,
                bytes_to_device: 0,
                bytes_from_device: 0,
                elapsed_ms: 0.0,
            });
        }
    }

    let float_accuracy =
        evaluate_topk(&ForwardSource::Float { arch, weights: &masters }, val, 1)?;
    let network = calibrate_network(arch, &masters, train, config.seed)?;
    let metadata = vec![
        ("kind".into(), "pretrain".into()),
        ("epochs".into(), config.max_epochs.to_string()),
        ("seed".into(), config.seed.to_string()),
        ("float_val_accuracy".into(), format!("{float_accuracy:.6}")),
        ("fault_model".into(), "none".into()),
    ];
    Ok(PretrainOutcome {
        checkpoint: Checkpoint { network, masters, metadata },
        log,
        float_accuracy,
    })
}

/// Calibrate per-layer fixed-point formats from the trained float model:
/// weight formats from the weights themselves, activation formats from the
/// peak magnitudes over a calibration batch, requantization shifts from the
/// resulting format chain. Formats are chosen once and stay fixed.
pub fn calibrate_network(
    arch: &Architecture,
    masters: &MasterWeights,
    calibration: &DatasetSplit,
    seed: u64,
) -> Result<NetworkDescriptor, TrainError> {
    const CALIBRATION_SAMPLES: usize = 512;
    if calibration.is_empty() {
        return Err(TrainError::Config("calibration split is empty".into()));
    }
    let n = calibration.len().min(CALIBRATION_SAMPLES);
    let order = shuffled_indices(calibration.len(), seed, u64::MAX);
    let picks = &order[..n];
    let sample_shape = arch.input_shape.to_vec();

    // Peak |activation| per layer output plus the input, over the batch.
    let peaks: Vec<Result<Vec<f64>, TrainError>> = picks
        .par_chunks(32)
        .map(|chunk| {
            let mut maxima = vec![0.0f64; arch.layers.len() + 1];
            for &idx in chunk {
                let x = FloatTensor::new(sample_shape.clone(), calibration.image(idx).to_vec())?;
                let acts = float_forward(arch, masters, &x)?;
                for (m, t) in maxima.iter_mut().zip(&acts.tensors) {
                    *m = m.max(t.max_abs());
                }
            }
            Ok(maxima)
        })
        .collect();
    let mut peak = vec![0.0f64; arch.layers.len() + 1];
    for p in peaks {
        for (m, v) in peak.iter_mut().zip(p?) {
            *m = m.max(v);
        }
    }

    let input_format = format_for_peak(peak[0])?;
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut cur_frac = input_format.frac_bits;
    for (i, layer) in arch.layers.iter().enumerate() {
        let desc = match *layer {
            ArchLayer::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let lt = masters.layers[i]
                    .as_ref()
                    .ok_or_else(|| TrainError::Config(format!("layer {i} has no weights")))?;
                let weight_format = calibrate_format(&lt.weights, 8)?;
                let (activation_format, shift) =
                    output_format(peak[i + 1], cur_frac, weight_format.frac_bits)?;
                cur_frac = activation_format.frac_bits;
                LayerDescriptor::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight_format,
                    activation_format,
                    requant_shift: shift,
                }
            }
            ArchLayer::FullyConnected { in_features, out_features } => {
                let lt = masters.layers[i]
                    .as_ref()
                    .ok_or_else(|| TrainError::Config(format!("layer {i} has no weights")))?;
                let weight_format = calibrate_format(&lt.weights, 8)?;
                let (activation_format, shift) =
                    output_format(peak[i + 1], cur_frac, weight_format.frac_bits)?;
                cur_frac = activation_format.frac_bits;
                LayerDescriptor::FullyConnected {
                    in_features,
                    out_features,
                    weight_format,
                    activation_format,
                    requant_shift: shift,
                }
            }
            ArchLayer::MaxPool { window, stride } => LayerDescriptor::MaxPool { window, stride },
            ArchLayer::Relu => LayerDescriptor::Relu,
        };
        layers.push(desc);
    }
    let net = NetworkDescriptor {
        layers,
        input_shape: arch.input_shape,
        input_format,
        num_classes: arch.num_classes,
    };
    net.plan()?;
    Ok(net)
}

fn format_for_peak(max_abs: f64) -> Result<QFormat, TrainError> {
    let probe = FloatTensor { shape: vec![1], data: vec![max_abs] };
    Ok(calibrate_format(&probe, 8)?)
}

/// Output format for a MAC layer: the calibrated precision, coarsened if
/// necessary so the requantization shift stays non-negative.
fn output_format(peak: f64, in_frac: u32, weight_frac: u32) -> Result<(QFormat, u32), TrainError> {
    let calibrated = format_for_peak(peak)?;
    let frac = calibrated.frac_bits.min(in_frac + weight_frac);
    let fmt = QFormat::new(8, frac)?;
    Ok((fmt, in_frac + weight_frac - frac))
}

/// Accelerator-in-the-loop fine-tuning (the training framework's core
/// loop). `device` is the configured template: its network must match the
/// checkpoint, write-back must be enabled, and its fault model and seed
/// define what the model adapts to.
pub fn finetune(
    start: &Checkpoint,
    device: DeviceHandle,
    train: &DatasetSplit,
    val: &DatasetSplit,
    config: &TrainConfig,
) -> Result<FinetuneOutcome, TrainError> {
    config.validate()?;
    if !device.write_back_enabled() {
        return Err(TrainError::WriteBackRequired);
    }
    if device.network() != &start.network {
        return Err(TrainError::Config(
            "device is not configured with the checkpoint's network".into(),
        ));
    }
    let net = &start.network;
    let arch = architecture_of(net);
    if !start.masters.matches(&arch) {
        return Err(TrainError::Config("master weights do not match the network".into()));
    }
    let plan = net.plan()?;
    let eval_split = val.prefix(config.eval_subset);

    // Clean quantized baseline of the starting model: zero-fault device.
    let clean = launch_accelerator(net.clone(), FaultModel::None, false, device.seed())?;
    let start_weights = quantize_masters(net, &start.masters)?;
    let baseline_accuracy = evaluate_topk(
        &ForwardSource::Device { template: &clean, weights: &start_weights, fault_epoch: 0 },
        &eval_split,
        1,
    )?;
    let target = config.accuracy_threshold * baseline_accuracy;

    // Evaluation device: same fault model and seed, no write-back.
    let eval_device =
        launch_accelerator(net.clone(), device.fault().clone(), false, device.seed())?;
    let time_model = DeviceTimeModel::new(clock_of(device.fault()));

    // Per-iteration transfer sizes (logical single-device accounting).
    let input_bytes: u64 = net.input_shape.iter().product::<usize>() as u64;
    let outputs_bytes: u64 =
        plan.iter().map(|p| p.output_shape.iter().product::<usize>() as u64).sum();
    let macs_per_forward: u64 = plan.iter().map(|p| p.macs).sum();

    let mut masters = start.masters.clone();
    let mut sgd = Sgd::new(&arch, config.learning_rate, config.momentum);
    let mut log = Vec::new();
    let mut iteration = 0u64;
    let mut eval_count = 0u64;
    let mut early_stop_met = false;

    let mut device_weights = quantize_masters(net, &masters)?;
    let weight_bytes: u64 = device_weights.iter().map(|w| w.transfer_bytes()).sum();
    let mut last_val = evaluate_topk(
        &ForwardSource::Device {
            template: &eval_device,
            weights: &device_weights,
            fault_epoch: EVAL_EPOCH_BASE,
        },
        &eval_split,
        1,
    )?;
    eval_count += 1;

    'training: for epoch in 0..config.max_epochs {
        let order = shuffled_indices(train.len(), config.seed, epoch as u64);
        for batch in order.chunks(config.batch_size) {
            device_weights = quantize_masters(net, &masters)?;
            let runs =
                run_training_batch(&device, &device_weights, train, batch, epoch as u64)?;

            let results: Vec<Result<(f64, MasterWeights), TrainError>> = batch
                .par_iter()
                .zip(&runs)
                .map(|(&idx, run)| {
                    let mut tensors = Vec::with_capacity(net.layers.len() + 1);
                    tensors.push(dequantize(&run.input));
                    for out in &run.layer_outputs {
                        tensors.push(dequantize(out));
                    }
                    let acts = Activations { tensors };
                    let (loss, dlogits) =
                        loss_and_grad(acts.logits(), train.labels[idx] as usize)?;
                    let grads = backward(&arch, &masters, &acts, &dlogits)?;
                    Ok((loss, grads))
                })
                .collect();
            let (loss, grads) = reduce_batch(results, batch.len())?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { iteration });
            }
            sgd.step(&mut masters, &grads)?;
            iteration += 1;

            let to_device = weight_bytes + batch.len() as u64 * input_bytes;
            let from_device = batch.len() as u64 * outputs_bytes;
            let elapsed_ms = time_model.transfer_ms(to_device + from_device)
                + time_model.compute_ms(batch.len() as u64 * macs_per_forward);

            if iteration % config.eval_interval as u64 == 0 {
                device_weights = quantize_masters(net, &masters)?;
                last_val = evaluate_topk(
                    &ForwardSource::Device {
                        template: &eval_device,
                        weights: &device_weights,
                        fault_epoch: EVAL_EPOCH_BASE + eval_count,
                    },
                    &eval_split,
                    1,
                )?;
                eval_count += 1;
                log.push(record(iteration, loss, last_val, to_device, from_device, elapsed_ms));
                if last_val >= target {
                    early_stop_met = true;
                    break 'training;
                }
            } else {
                log.push(record(iteration, loss, last_val, to_device, from_device, elapsed_ms));
            }
        }
    }

    // Final evaluation unless the early stop just measured one.
    if !early_stop_met {
        device_weights = quantize_masters(net, &masters)?;
        last_val = evaluate_topk(
            &ForwardSource::Device {
                template: &eval_device,
                weights: &device_weights,
                fault_epoch: EVAL_EPOCH_BASE + eval_count,
            },
            &eval_split,
            1,
        )?;
        early_stop_met = last_val >= target;
    }

    let metadata = vec![
        ("kind".into(), "finetune".into()),
        ("epochs".into(), config.max_epochs.to_string()),
        ("seed".into(), config.seed.to_string()),
        ("fault_model".into(), device.fault().describe()),
        ("baseline_accuracy".into(), format!("{baseline_accuracy:.6}")),
        ("final_device_accuracy".into(), format!("{last_val:.6}")),
        ("early_stop_met".into(), early_stop_met.to_string()),
    ];
    Ok(FinetuneOutcome {
        checkpoint: Checkpoint { network: net.clone(), masters, metadata },
        log,
        early_stop_met,
        baseline_accuracy,
        final_device_accuracy: last_val,
    })
}

fn record(
    iteration: u64,
    loss: f64,
    val_accuracy: f64,
    bytes_to_device: u64,
    bytes_from_device: u64,
    elapsed_ms: f64,
) -> IterationRecord {
    IterationRecord { iteration, loss, val_accuracy, bytes_to_device, bytes_from_device, elapsed_ms }
}

fn clock_of(fault: &FaultModel) -> f64 {
    match fault {
        FaultModel::Overclock { freq_mhz, .. } => *freq_mhz,
        _ => DEFAULT_CLOCK_MHZ,
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, StreamId::new(epoch, 0, SHUFFLE_STREAM));
    rng.shuffle(&mut order);
    order
}

/// Average per-sample losses and gradients in sample order; the fixed
/// reduction order keeps results identical across worker counts.
fn reduce_batch(
    results: Vec<Result<(f64, MasterWeights), TrainError>>,
    batch_len: usize,
) -> Result<(f64, MasterWeights), TrainError> {
    let mut iter = results.into_iter();
    let (mut loss_sum, mut grads) = iter.next().expect("non-empty batch")?;
    for r in iter {
        let (l, g) = r?;
        loss_sum += l;
        for (acc, add) in grads.layers.iter_mut().zip(&g.layers) {
            let (Some(acc), Some(add)) = (acc.as_mut(), add.as_ref()) else { continue };
            for (a, b) in acc.weights.data.iter_mut().zip(&add.weights.data) {
                *a += b;
            }
            for (a, b) in acc.bias.data.iter_mut().zip(&add.bias.data) {
                *a += b;
            }
        }
    }
    let scale = 1.0 / batch_len as f64;
    for lt in grads.layers.iter_mut().flatten() {
        for v in &mut lt.weights.data {
            *v *= scale;
        }
        for v in &mut lt.bias.data {
            *v *= scale;
        }
    }
    Ok((loss_sum * scale, grads))
}
