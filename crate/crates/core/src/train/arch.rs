//! Network topologies independent of any fixed-point calibration. An
//! [`Architecture`] becomes a device [`NetworkDescriptor`] once per-layer
//! formats have been calibrated from a pre-trained model.

use crate::accelsim::{LayerDescriptor, NetworkDescriptor};
use crate::train::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchLayer {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    FullyConnected { in_features: usize, out_features: usize },
    MaxPool { window: usize, stride: usize },
    Relu,
}

impl ArchLayer {
    pub fn is_parametric(&self) -> bool {
        matches!(self, Self::Conv2d { .. } | Self::FullyConnected { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            Self::Conv2d { in_channels, out_channels, kernel, .. } => {
                Some(vec![out_channels, in_channels, kernel, kernel])
            }
            Self::FullyConnected { in_features, out_features, .. } => {
                Some(vec![out_features, in_features])
            }
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            Self::Conv2d { out_channels, .. } => Some(out_channels),
            Self::FullyConnected { out_features, .. } => Some(out_features),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<ArchLayer>,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

impl Architecture {
    /// The desk-scale LeNet-class network for 28x28 grayscale digits:
    /// two 5x5 conv/pool stages and two fully connected layers.
    pub fn lenet() -> Self {
        Self {
            layers: vec![
                ArchLayer::Conv2d { in_channels: 1, out_channels: 8, kernel: 5, stride: 1, padding: 0 },
                ArchLayer::Relu,
                ArchLayer::MaxPool { window: 2, stride: 2 },
                ArchLayer::Conv2d { in_channels: 8, out_channels: 16, kernel: 5, stride: 1, padding: 0 },
                ArchLayer::Relu,
                ArchLayer::MaxPool { window: 2, stride: 2 },
                ArchLayer::FullyConnected { in_features: 16 * 4 * 4, out_features: 64 },
                ArchLayer::Relu,
                ArchLayer::FullyConnected { in_features: 64, out_features: 10 },
            ],
            input_shape: [1, 28, 28],
            num_classes: 10,
        }
    }

    /// Look up an architecture by its configuration name.
    pub fn by_name(name: &str) -> Result<Self, TrainError> {
        match name {
            "lenet" => Ok(Self::lenet()),
            other => Err(TrainError::Config(format!("unknown network architecture '{other}'"))),
        }
    }

    /// Shape of each layer's input and output, validating the chain.
    pub fn shape_flow(&self) -> Result<Vec<([usize; 3], [usize; 3])>, TrainError> {
        let mut shape = self.input_shape;
        let mut flow = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = match *layer {
                ArchLayer::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                    if in_channels != shape[0] {
                        return Err(TrainError::Config(format!(
                            "layer {i}: conv expects {in_channels} channels, got {}",
                            shape[0]
                        )));
                    }
                    let oh = out_dim(shape[1] + 2 * padding, kernel, stride)
                        .ok_or_else(|| bad_dim(i))?;
                    let ow = out_dim(shape[2] + 2 * padding, kernel, stride)
                        .ok_or_else(|| bad_dim(i))?;
                    [out_channels, oh, ow]
                }
                ArchLayer::FullyConnected { in_features, out_features } => {
                    let flat = shape[0] * shape[1] * shape[2];
                    if in_features != flat {
                        return Err(TrainError::Config(format!(
                            "layer {i}: fc expects {in_features} inputs, got {flat}"
                        )));
                    }
                    [out_features, 1, 1]
                }
                ArchLayer::MaxPool { window, stride } => {
                    let oh = out_dim(shape[1], window, stride).ok_or_else(|| bad_dim(i))?;
                    let ow = out_dim(shape[2], window, stride).ok_or_else(|| bad_dim(i))?;
                    [shape[0], oh, ow]
                }
                ArchLayer::Relu => shape,
            };
            flow.push((shape, out));
            shape = out;
        }
        let final_len = shape[0] * shape[1] * shape[2];
        if final_len != self.num_classes {
            return Err(TrainError::Config(format!(
                "network produces {final_len} outputs for {} classes",
                self.num_classes
            )));
        }
        Ok(flow)
    }

    pub fn parametric_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_parametric()).count()
    }
}

fn out_dim(extent: usize, window: usize, stride: usize) -> Option<usize> {
    if extent < window || (extent - window) % stride != 0 {
        None
    } else {
        Some((extent - window) / stride + 1)
    }
}

fn bad_dim(layer: usize) -> TrainError {
    TrainError::Config(format!("layer {layer}: window does not tile the input"))
}

/// Project a calibrated device descriptor back onto its bare topology.
pub fn architecture_of(net: &NetworkDescriptor) -> Architecture {
    let layers = net
        .layers
        .iter()
        .map(|l| match *l {
            LayerDescriptor::Conv2d {
                in_channels, out_channels, kernel, stride, padding, ..
            } => ArchLayer::Conv2d { in_channels, out_channels, kernel, stride, padding },
            LayerDescriptor::FullyConnected { in_features, out_features, .. } => {
                ArchLayer::FullyConnected { in_features, out_features }
            }
            LayerDescriptor::MaxPool { window, stride } => ArchLayer::MaxPool { window, stride },
            LayerDescriptor::Relu => ArchLayer::Relu,
        })
        .collect();
    Architecture { layers, input_shape: net.input_shape, num_classes: net.num_classes }
}
