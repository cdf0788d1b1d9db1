//! Shared fixtures for the criterion benchmarks: a calibrated LeNet-class
//! device configuration with deterministic weights, without needing any
//! dataset on disk.

use fltrain_core::{
    calibrate_format, launch_accelerator, quantize_masters, ArchLayer, Architecture, DeviceHandle,
    FaultModel, FloatTensor, LayerDescriptor, LayerWeights, MasterWeights, NetworkDescriptor,
    QFormat, QTensor, RngStream,
};

/// The MNIST-scale network used across benchmarks.
pub fn lenet() -> Architecture {
    Architecture::lenet()
}

/// Deterministic pseudo-trained masters: Kaiming-random weights.
pub fn synthetic_masters(arch: &Architecture, seed: u64) -> MasterWeights {
    MasterWeights::init(arch, seed)
}

/// Calibrate a device descriptor from synthetic masters with a plain
/// format chain, so benchmarks need no dataset on disk.
pub fn synthetic_network(arch: &Architecture, masters: &MasterWeights) -> NetworkDescriptor {
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
    NetworkDescriptor {
        layers,
        input_shape: arch.input_shape,
        input_format,
        num_classes: arch.num_classes,
    }
}

/// A launched device plus everything needed to run forward passes.
pub struct BenchRig {
    pub device: DeviceHandle,
    pub weights: Vec<LayerWeights>,
    pub input: QTensor,
}

pub fn rig(fault: FaultModel, seed: u64) -> BenchRig {
    let arch = lenet();
    let masters = synthetic_masters(&arch, seed);
    let net = synthetic_network(&arch, &masters);
    let weights = quantize_masters(&net, &masters).unwrap();
    let mut rng = RngStream::from_seed(seed ^ 0x55);
    let n: usize = net.input_shape.iter().product();
    let pixels: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let x = FloatTensor::new(net.input_shape.to_vec(), pixels).unwrap();
    let input = fltrain_core::quantize(&x, net.input_format);
    let device = launch_accelerator(net, fault, false, seed).unwrap();
    BenchRig { device, weights, input }
}
