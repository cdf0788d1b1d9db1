//! Shared fixtures and oracles for the acceptance suite.
//!
//! The straight-line reference forward here is written independently of the
//! device simulator, directly from the fixed-point arithmetic definitions:
//! no device memory, no handles, plain nested loops and i64 accumulators.

use std::path::PathBuf;
use std::sync::OnceLock;

use fltrain_core::{
    calibrate_format, load_idx, pretrain, ArchLayer, Architecture, Checkpoint, DatasetSplit,
    FloatTensor, LayerDescriptor, LayerWeights, MasterWeights, NetworkDescriptor, QFormat,
    QTensor, RngStream, TrainConfig,
};

/// MNIST location: FLTRAIN_MNIST_DIR or `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("FLTRAIN_MNIST_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn mnist() -> &'static (DatasetSplit, DatasetSplit) {
    static DATA: OnceLock<(DatasetSplit, DatasetSplit)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = mnist_dir();
        let train = load_idx(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
        );
        let test = load_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
        );
        match (train, test) {
            (Ok(tr), Ok(te)) => (tr, te),
            (e1, e2) => panic!(
                "MNIST IDX files not found under {} (set FLTRAIN_MNIST_DIR or see README): \
                 {:?} / {:?}",
                dir.display(),
                e1.err(),
                e2.err()
            ),
        }
    })
}

/// Evaluation subset for sweep/stability experiments (fixed prefix of the
/// test split; paired across all compared points).
pub const EVAL_SUBSET: usize = 2000;

/// Seeds for per-point accuracy means.
pub const POINT_SEEDS: [u64; 5] = [101, 102, 103, 104, 105];

pub fn pretrain_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        momentum: 0.9,
        batch_size: 32,
        max_epochs: 3,
        accuracy_threshold: 0.99,
        eval_interval: 600,
        eval_subset: EVAL_SUBSET,
        seed: 42,
    }
}

/// The MNIST checkpoint every training-dependent criterion starts from.
pub fn pretrained() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| {
        let (train, test) = mnist();
        let arch = Architecture::lenet();
        let out = pretrain(&arch, train, test, &pretrain_config()).expect("pretraining failed");
        out.checkpoint
    })
}

/// Deterministic synthetic "LeNet-class" device: random masters quantized
/// into a fixed, consistent format chain. No dataset involved.
pub fn synthetic_device_setup(seed: u64) -> (NetworkDescriptor, Vec<LayerWeights>) {
    let arch = Architecture::lenet();
    let masters = MasterWeights::init(&arch, seed);
    let input_format = QFormat::new(8, 6).unwrap();
    let mut cur = input_format.frac_bits;
    let layers = arch
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| match *l {
            ArchLayer::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let wf = calibrate_format(&masters.layers[i].as_ref().unwrap().weights, 8).unwrap();
                let out_frac = 4.min(cur + wf.frac_bits);
                let shift = cur + wf.frac_bits - out_frac;
                cur = out_frac;
                LayerDescriptor::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight_format: wf,
                    activation_format: QFormat::new(8, out_frac).unwrap(),
                    requant_shift: shift,
                }
            }
            ArchLayer::FullyConnected { in_features, out_features } => {
                let wf = calibrate_format(&masters.layers[i].as_ref().unwrap().weights, 8).unwrap();
                let out_frac = 3.min(cur + wf.frac_bits);
                let shift = cur + wf.frac_bits - out_frac;
                cur = out_frac;
                LayerDescriptor::FullyConnected {
                    in_features,
                    out_features,
                    weight_format: wf,
                    activation_format: QFormat::new(8, out_frac).unwrap(),
                    requant_shift: shift,
                }
            }
            ArchLayer::MaxPool { window, stride } => LayerDescriptor::MaxPool { window, stride },
            ArchLayer::Relu => LayerDescriptor::Relu,
        })
        .collect();
    let net = NetworkDescriptor {
        layers,
        input_shape: arch.input_shape,
        input_format,
        num_classes: arch.num_classes,
    };
    let weights = fltrain_core::quantize_masters(&net, &masters).unwrap();
    (net, weights)
}

pub fn random_input(rng: &mut RngStream, shape: &[usize], fmt: QFormat) -> QTensor {
    let n: usize = shape.iter().product();
    let span = (fmt.raw_max() - fmt.raw_min() + 1) as u64;
    let data =
        (0..n).map(|_| (fmt.raw_min() + rng.next_below(span) as i32) as i8).collect();
    QTensor::new(shape.to_vec(), data, fmt).unwrap()
}

/// Straight-line fault-free fixed-point forward: the independent oracle for
/// zero-fault bit-exactness.
pub fn reference_forward(
    net: &NetworkDescriptor,
    weights: &[LayerWeights],
    input: &QTensor,
) -> Vec<i8> {
    let mut shape = net.input_shape;
    let mut data: Vec<i64> = input.data.iter().map(|&v| v as i64).collect();
    let mut widx = 0;
    for layer in &net.layers {
        match *layer {
            LayerDescriptor::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                requant_shift,
                ..
            } => {
                let lw = &weights[widx];
                widx += 1;
                let (ih, iw) = (shape[1], shape[2]);
                let oh = (ih + 2 * padding - kernel) / stride + 1;
                let ow = (iw + 2 * padding - kernel) / stride + 1;
                let mut out = Vec::with_capacity(out_channels * oh * ow);
                for oc in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = lw.bias[oc] as i64;
                            for c in 0..in_channels {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if iy < 0
                                            || iy >= ih as isize
                                            || ix < 0
                                            || ix >= iw as isize
                                        {
                                            continue;
                                        }
                                        let x = data[(c * ih + iy as usize) * iw + ix as usize];
                                        let w = lw.weights.data
                                            [((oc * in_channels + c) * kernel + ky) * kernel + kx]
                                            as i64;
                                        acc += w * x;
                                    }
                                }
                            }
                            out.push(round_shift_saturate(acc, requant_shift));
                        }
                    }
                }
                shape = [out_channels, oh, ow];
                data = out;
            }
            LayerDescriptor::FullyConnected { in_features, out_features, requant_shift, .. } => {
                let lw = &weights[widx];
                widx += 1;
                let mut out = Vec::with_capacity(out_features);
                for o in 0..out_features {
                    let mut acc = lw.bias[o] as i64;
                    for j in 0..in_features {
                        acc += lw.weights.data[o * in_features + j] as i64 * data[j];
                    }
                    out.push(round_shift_saturate(acc, requant_shift));
                }
                shape = [out_features, 1, 1];
                data = out;
            }
            LayerDescriptor::MaxPool { window, stride } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let oh = (h - window) / stride + 1;
                let ow = (w - window) / stride + 1;
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut m = i64::MIN;
                            for ky in 0..window {
                                for kx in 0..window {
                                    let v = data
                                        [(ch * h + oy * stride + ky) * w + ox * stride + kx];
                                    m = m.max(v);
                                }
                            }
                            out.push(m);
                        }
                    }
                }
                shape = [c, oh, ow];
                data = out;
            }
            LayerDescriptor::Relu => {
                data = data.iter().map(|&v| v.max(0)).collect();
            }
        }
    }
    data.iter().map(|&v| v as i8).collect()
}

fn round_shift_saturate(acc: i64, shift: u32) -> i64 {
    let rounded = if shift == 0 {
        acc
    } else {
        let half = 1i64 << (shift - 1);
        if acc >= 0 { (acc + half) >> shift } else { -((-acc + half) >> shift) }
    };
    rounded.clamp(-128, 127)
}

/// Blob-image synthetic dataset in MNIST geometry, for fast CLI runs.
pub fn synthetic_mnist_like(n: usize, seed: u64) -> DatasetSplit {
    let (h, w, classes) = (28usize, 28usize, 10usize);
    let mut rng = RngStream::from_seed(seed);
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label as u32);
        let (cy, cx) = (4 + (label / 5) * 14 + 2, 2 + (label % 5) * 5);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
                data.push((((-d2 / 6.0).exp()) + 0.05 * rng.next_f64()).min(1.0));
            }
        }
    }
    let images = FloatTensor::new(vec![n, 1, h, w], data).unwrap();
    DatasetSplit::new(images, labels, classes).unwrap()
}

/// Write a dataset split as an IDX image/label file pair.
pub fn write_idx_pair(split: &DatasetSplit, images: &std::path::Path, labels: &std::path::Path) {
    let n = split.len();
    let (h, w) = (split.images.shape[2], split.images.shape[3]);
    let mut img = Vec::with_capacity(16 + n * h * w);
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    img.extend(split.images.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    std::fs::write(images, img).unwrap();

    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend(split.labels.iter().map(|&l| l as u8));
    std::fs::write(labels, lbl).unwrap();
}

pub fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}
