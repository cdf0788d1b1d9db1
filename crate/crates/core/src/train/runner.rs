//! Host-side plumbing between master weights and the simulated device:
//! quantizing parameters, pushing samples through device forward passes in
//! parallel, and the top-k evaluation loops.
//!
//! Parallelism never changes results: every sample's fault stream is keyed
//! by its dataset index, per-sample outputs are collected in index order,
//! and reductions run sequentially over that order.

use rayon::prelude::*;

use crate::accelsim::{
    launch_accelerator, DeviceHandle, ForwardPass, LayerWeights, NetworkDescriptor, BIAS_ABS_MAX,
};
use crate::data::DatasetSplit;
use crate::qformat::{quantize, QFormat, QTensor};
use crate::train::arch::Architecture;
use crate::train::float_net::{float_forward, MasterWeights};
use crate::train::TrainError;

/// Forward passes used for validation are tagged with epochs far above any
/// training epoch so evaluation faults never replay training faults.
pub const EVAL_EPOCH_BASE: u64 = 1 << 32;

/// Quantize master weights into the exact tensors the device consumes:
/// int8 weights in each layer's weight format, biases scaled to accumulator
/// units (input_frac + weight_frac) and clamped to the accumulator budget.
pub fn quantize_masters(
    net: &NetworkDescriptor,
    masters: &MasterWeights,
) -> Result<Vec<LayerWeights>, TrainError> {
    if masters.layers.len() != net.layers.len() {
        return Err(TrainError::Config(format!(
            "masters cover {} layers, network has {}",
            masters.layers.len(),
            net.layers.len()
        )));
    }
    let plan = net.plan()?;
    let mut out = Vec::with_capacity(net.parametric_layer_count());
    for (i, layer) in net.layers.iter().enumerate() {
        if !layer.is_parametric() {
            continue;
        }
        let lt = masters.layers[i]
            .as_ref()
            .ok_or_else(|| TrainError::Config(format!("layer {i} has no master weights")))?;
        let wf = layer.weight_format().expect("parametric");
        let weights = quantize(&lt.weights, wf);
        let bias_frac = plan[i].input_format.frac_bits + wf.frac_bits;
        let scale = (bias_frac as f64).exp2();
        let bias = lt
            .bias
            .data
            .iter()
            .map(|&b| {
                let r = (b * scale).round();
                r.clamp(-(BIAS_ABS_MAX as f64), BIAS_ABS_MAX as f64) as i32
            })
            .collect();
        out.push(LayerWeights { weights, bias });
    }
    Ok(out)
}

/// Quantize one image slice straight into a device input tensor.
pub fn quantize_input(pixels: &[f64], shape: &[usize], fmt: QFormat) -> QTensor {
    let data = pixels.iter().map(|&v| fmt.quantize_value(v) as i8).collect();
    QTensor { shape: shape.to_vec(), data, format: fmt }
}

/// Result of one device forward pass during training.
pub struct SampleRun {
    /// Per-layer outputs, in layer order (write-back path).
    pub layer_outputs: Vec<QTensor>,
    /// The quantized input that was sent to the device.
    pub input: QTensor,
}

/// Run `sample_indices` through device forward passes with write-back,
/// returning per-sample outputs in the given order. Each chunk of samples
/// gets its own device handle cloned from the template; results do not
/// depend on the chunking because fault streams are keyed by
/// `(epoch, dataset index)`.
pub fn run_training_batch(
    template: &DeviceHandle,
    weights: &[LayerWeights],
    split: &DatasetSplit,
    sample_indices: &[usize],
    epoch: u64,
) -> Result<Vec<SampleRun>, TrainError> {
    let shape = &template.network().input_shape;
    let fmt = template.network().input_format;
    let runs: Vec<Result<Vec<SampleRun>, TrainError>> = sample_indices
        .par_chunks(8)
        .map(|chunk| {
            let mut handle = template.clone();
            let mut out = Vec::with_capacity(chunk.len());
            let mut first = true;
            for &idx in chunk {
                let input = quantize_input(split.image(idx), shape, fmt);
                if first {
                    handle.data_to_device(weights, &input)?;
                    first = false;
                } else {
                    handle.input_to_device(&input)?;
                }
                handle.device_forward(ForwardPass::new(epoch, idx as u64))?;
                let layer_outputs = handle.data_from_device()?;
                out.push(SampleRun { layer_outputs, input });
            }
            Ok(out)
        })
        .collect();
    let mut flat = Vec::with_capacity(sample_indices.len());
    for r in runs {
        flat.extend(r?);
    }
    Ok(flat)
}

/// Where evaluation logits come from: the simulated (possibly faulty)
/// device, or the float reference path on the host.
pub enum ForwardSource<'a> {
    Device {
        template: &'a DeviceHandle,
        weights: &'a [LayerWeights],
        /// Epoch tag for the fault streams of this evaluation.
        fault_epoch: u64,
    },
    Float {
        arch: &'a Architecture,
        weights: &'a MasterWeights,
    },
}

/// Top-k accuracy over a dataset split: the fraction of samples whose label
/// ranks among the k largest logits, ties broken toward lower class index.
pub fn evaluate_topk(
    source: &ForwardSource<'_>,
    split: &DatasetSplit,
    k: usize,
) -> Result<f64, TrainError> {
    Ok(evaluate_topk_multi(source, split, &[k])?[0])
}

/// Top-k accuracy for several k values from a single forward pass per
/// sample.
pub fn evaluate_topk_multi(
    source: &ForwardSource<'_>,
    split: &DatasetSplit,
    ks: &[usize],
) -> Result<Vec<f64>, TrainError> {
    for &k in ks {
        if k == 0 || k > split.num_classes {
            return Err(TrainError::Config(format!(
                "top-{k} undefined for {} classes",
                split.num_classes
            )));
        }
    }
    match source {
        ForwardSource::Float { arch, weights } => evaluate_float_topk(arch, weights, split, ks),
        ForwardSource::Device { template, weights, fault_epoch } => {
            evaluate_device_topk(template, weights, split, ks, *fault_epoch)
        }
    }
}

fn evaluate_float_topk(
    arch: &Architecture,
    weights: &MasterWeights,
    split: &DatasetSplit,
    ks: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let shape = arch.input_shape.to_vec();
    let indices: Vec<usize> = (0..split.len()).collect();
    let hits: Vec<Result<Vec<u64>, TrainError>> = indices
        .par_chunks(64)
        .map(|chunk| {
            let mut correct = vec![0u64; ks.len()];
            for &idx in chunk {
                let x = crate::qformat::FloatTensor::new(
                    shape.clone(),
                    split.image(idx).to_vec(),
                )?;
                let acts = float_forward(arch, weights, &x)?;
                for (c, &k) in correct.iter_mut().zip(ks) {
                    if in_top_k_f64(&acts.logits().data, split.labels[idx] as usize, k) {
                        *c += 1;
                    }
                }
            }
            Ok(correct)
        })
        .collect();
    reduce_hits(hits, ks.len(), split.len())
}

fn evaluate_device_topk(
    template: &DeviceHandle,
    weights: &[LayerWeights],
    split: &DatasetSplit,
    ks: &[usize],
    fault_epoch: u64,
) -> Result<Vec<f64>, TrainError> {
    let shape = &template.network().input_shape;
    let fmt = template.network().input_format;
    let indices: Vec<usize> = (0..split.len()).collect();
    let hits: Vec<Result<Vec<u64>, TrainError>> = indices
        .par_chunks(64)
        .map(|chunk| {
            let mut handle = template.clone();
            let mut correct = vec![0u64; ks.len()];
            let mut first = true;
            for &idx in chunk {
                let input = quantize_input(split.image(idx), shape, fmt);
                if first {
                    handle.data_to_device(weights, &input)?;
                    first = false;
                } else {
                    handle.input_to_device(&input)?;
                }
                let logits = handle.device_forward(ForwardPass::new(fault_epoch, idx as u64))?;
                for (c, &k) in correct.iter_mut().zip(ks) {
                    if in_top_k_raw(&logits.data, split.labels[idx] as usize, k) {
                        *c += 1;
                    }
                }
            }
            Ok(correct)
        })
        .collect();
    reduce_hits(hits, ks.len(), split.len())
}

fn reduce_hits(
    hits: Vec<Result<Vec<u64>, TrainError>>,
    ways: usize,
    samples: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut totals = vec![0u64; ways];
    for h in hits {
        for (t, v) in totals.iter_mut().zip(h?) {
            *t += v;
        }
    }
    Ok(totals.iter().map(|&t| t as f64 / samples as f64).collect())
}

fn in_top_k_raw(logits: &[i8], label: usize, k: usize) -> bool {
    top_k_indices(logits.len(), k, |a, b| logits[a].cmp(&logits[b])).contains(&label)
}

pub(crate) fn in_top_k_f64(logits: &[f64], label: usize, k: usize) -> bool {
    top_k_indices(logits.len(), k, |a, b| {
        logits[a].partial_cmp(&logits[b]).expect("finite logits")
    })
    .contains(&label)
}

/// Indices of the k largest values; equal values rank by lower index.
fn top_k_indices<F>(n: usize, k: usize, cmp: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> std::cmp::Ordering,
{
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| cmp(b, a).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Evaluate one checkpointed model `seeds.len()` times on devices that are
/// identical except for their fault seed.
pub struct StabilityReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Repeatedly evaluate the same model under fresh fault realizations; the
/// spread measures how stable the deployed accuracy is.
pub fn stability_run(
    template: &DeviceHandle,
    weights: &[LayerWeights],
    split: &DatasetSplit,
    k: usize,
    seeds: &[u64],
) -> Result<StabilityReport, TrainError> {
    if seeds.len() < 2 {
        return Err(TrainError::Config("stability run needs at least 2 repeats".into()));
    }
    let mut accuracies = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let handle = launch_accelerator(
            template.network().clone(),
            template.fault().clone(),
            false,
            seed,
        )?;
        accuracies.push(evaluate_device_topk(&handle, weights, split, &[k], 0)?[0]);
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let min = accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport { accuracies, mean, std: var.sqrt(), min, max })
}
