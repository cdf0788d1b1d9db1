//! Floating-point reference network: forward pass, softmax cross-entropy,
//! and backpropagation. During fine-tuning the backward pass consumes
//! dequantized device activations (faults included) as if this forward pass
//! had produced them; the quantize/device boundary is treated as identity
//! for gradient flow.

use crate::faultmodel::RngStream;
use crate::qformat::FloatTensor;
use crate::train::arch::{ArchLayer, Architecture};
use crate::train::TrainError;

/// Weight and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    pub weights: FloatTensor,
    pub bias: FloatTensor,
}

/// Full-precision parameters held by the host, one entry per architecture
/// layer (None for pool/relu). Updated by backward propagation; quantized
/// each iteration for the device.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterWeights {
    pub layers: Vec<Option<LayerTensors>>,
}

impl MasterWeights {
    /// Kaiming-uniform initialization, deterministic in the seed.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = RngStream::from_seed(seed ^ 0x77ee_11aa_55cc_33bb);
        let layers = arch
            .layers
            .iter()
            .map(|layer| {
                layer.weight_shape().map(|shape| {
                    let fan_in = match *layer {
                        ArchLayer::Conv2d { in_channels, kernel, .. } => {
                            in_channels * kernel * kernel
                        }
                        ArchLayer::FullyConnected { in_features, .. } => in_features,
                        _ => unreachable!("parametric layers only"),
                    };
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let n: usize = shape.iter().product();
                    let data =
                        (0..n).map(|_| (rng.next_f64() * 2.0 - 1.0) * limit).collect();
                    LayerTensors {
                        weights: FloatTensor { shape, data },
                        bias: FloatTensor::zeros(vec![layer.bias_len().unwrap()]),
                    }
                })
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(arch: &Architecture) -> Self {
        let layers = arch
            .layers
            .iter()
            .map(|layer| {
                layer.weight_shape().map(|shape| LayerTensors {
                    weights: FloatTensor::zeros(shape),
                    bias: FloatTensor::zeros(vec![layer.bias_len().unwrap()]),
                })
            })
            .collect();
        Self { layers }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|lt| lt.weights.is_finite() && lt.bias.is_finite())
    }

    /// Shape compatibility with an architecture.
    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layers.len() == arch.layers.len()
            && self.layers.iter().zip(&arch.layers).all(|(lt, al)| match (lt, al.weight_shape()) {
                (Some(lt), Some(shape)) => {
                    lt.weights.shape == shape
                        && lt.bias.data.len() == al.bias_len().unwrap_or(0)
                }
                (None, None) => true,
                _ => false,
            })
    }
}

/// Per-layer gradients, same layout as [`MasterWeights`].
pub type Gradients = MasterWeights;

/// Activations of one forward pass: entry 0 is the network input, entry
/// `i + 1` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Activations {
    pub tensors: Vec<FloatTensor>,
}

impl Activations {
    pub fn logits(&self) -> &FloatTensor {
        self.tensors.last().expect("non-empty network")
    }

    pub fn input_of(&self, layer: usize) -> &FloatTensor {
        &self.tensors[layer]
    }

    pub fn output_of(&self, layer: usize) -> &FloatTensor {
        &self.tensors[layer + 1]
    }
}

/// Standard float forward pass with the same cross-correlation convention
/// as the device. Returns every intermediate activation.
pub fn float_forward(
    arch: &Architecture,
    weights: &MasterWeights,
    x: &FloatTensor,
) -> Result<Activations, TrainError> {
    let flow = arch.shape_flow()?;
    if x.shape != flow[0].0.to_vec() {
        return Err(TrainError::Config(format!(
            "input shape {:?} does not match network input {:?}",
            x.shape, flow[0].0
        )));
    }
    let mut tensors = Vec::with_capacity(arch.layers.len() + 1);
    tensors.push(x.clone());
    for (i, layer) in arch.layers.iter().enumerate() {
        let input = tensors.last().unwrap();
        let out = match *layer {
            ArchLayer::Conv2d { out_channels, kernel, stride, padding, .. } => {
                let lt = weights.layers[i].as_ref().ok_or_else(|| missing_weights(i))?;
                conv2d_f(
                    input,
                    &lt.weights,
                    &lt.bias.data,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    flow[i].1,
                )
            }
            ArchLayer::FullyConnected { in_features, out_features } => {
                let lt = weights.layers[i].as_ref().ok_or_else(|| missing_weights(i))?;
                fc_f(input, &lt.weights, &lt.bias.data, in_features, out_features)
            }
            ArchLayer::MaxPool { window, stride } => max_pool_f(input, window, stride, flow[i].1),
            ArchLayer::Relu => relu_f(input),
        };
        tensors.push(out);
    }
    Ok(Activations { tensors })
}

fn missing_weights(layer: usize) -> TrainError {
    TrainError::Config(format!("layer {layer} has no weights"))
}

#[allow(clippy::too_many_arguments)]
fn conv2d_f(
    input: &FloatTensor,
    weights: &FloatTensor,
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_shape: [usize; 3],
) -> FloatTensor {
    let (ic, ih, iw) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = vec![0.0f64; out_channels * oh * ow];
    for oc in 0..out_channels {
        let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        out_plane.fill(bias[oc]);
        for c in 0..ic {
            let in_plane = &input.data[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let w = weights.data[((oc * ic + c) * kernel + ky) * kernel + kx];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * iw..(iy as usize + 1) * iw];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < iw as isize {
                                out_row[ox] += w * in_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    FloatTensor { shape: out_shape.to_vec(), data: out }
}

fn fc_f(
    input: &FloatTensor,
    weights: &FloatTensor,
    bias: &[f64],
    in_features: usize,
    out_features: usize,
) -> FloatTensor {
    let x = &input.data;
    debug_assert_eq!(x.len(), in_features);
    let mut out = vec![0.0f64; out_features];
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &weights.data[o * in_features..(o + 1) * in_features];
        let mut acc = bias[o];
        for j in 0..in_features {
            acc += row[j] * x[j];
        }
        *slot = acc;
    }
    FloatTensor { shape: vec![out_features, 1, 1], data: out }
}

fn max_pool_f(input: &FloatTensor, window: usize, stride: usize, out_shape: [usize; 3]) -> FloatTensor {
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        let plane = &input.data[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..window {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        m = m.max(plane[row + kx]);
                    }
                }
                out[(ch * oh + oy) * ow + ox] = m;
            }
        }
    }
    FloatTensor { shape: out_shape.to_vec(), data: out }
}

fn relu_f(input: &FloatTensor) -> FloatTensor {
    FloatTensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Softmax cross-entropy loss and its gradient with respect to the logits:
/// `softmax(logits) - onehot(label)`.
pub fn loss_and_grad(logits: &FloatTensor, label: usize) -> Result<(f64, FloatTensor), TrainError> {
    let n = logits.data.len();
    if label >= n {
        return Err(TrainError::Config(format!("label {label} out of range for {n} classes")));
    }
    let max = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut grad = Vec::with_capacity(n);
    let mut sum = 0.0;
    for &l in &logits.data {
        let e = (l - max).exp();
        grad.push(e);
        sum += e;
    }
    let loss = sum.ln() + max - logits.data[label];
    for g in &mut grad {
        *g /= sum;
    }
    grad[label] -= 1.0;
    Ok((loss, FloatTensor { shape: logits.shape.clone(), data: grad }))
}

/// Backpropagate through the network. `acts` holds the forward activations
/// (dequantized device outputs during fine-tuning). The relu gradient gates
/// on the stored activation being positive, and max-pool routes gradient to
/// the first maximal input position in scan order.
pub fn backward(
    arch: &Architecture,
    weights: &MasterWeights,
    acts: &Activations,
    dlogits: &FloatTensor,
) -> Result<Gradients, TrainError> {
    if acts.tensors.len() != arch.layers.len() + 1 {
        return Err(TrainError::MissingActivations {
            expected: arch.layers.len() + 1,
            actual: acts.tensors.len(),
        });
    }
    let mut grads = MasterWeights::zeros_like(arch);
    let mut grad = dlogits.clone();
    for (i, layer) in arch.layers.iter().enumerate().rev() {
        let input = acts.input_of(i);
        grad = match *layer {
            ArchLayer::Conv2d { out_channels, kernel, stride, padding, .. } => {
                let lt = weights.layers[i].as_ref().ok_or_else(|| missing_weights(i))?;
                let g = grads.layers[i].as_mut().expect("parametric");
                conv2d_backward(
                    input,
                    &lt.weights,
                    &grad,
                    g,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                )
            }
            ArchLayer::FullyConnected { in_features, out_features } => {
                let lt = weights.layers[i].as_ref().ok_or_else(|| missing_weights(i))?;
                let g = grads.layers[i].as_mut().expect("parametric");
                fc_backward(input, &lt.weights, &grad, g, in_features, out_features)
            }
            ArchLayer::MaxPool { window, stride } => {
                max_pool_backward(input, &grad, window, stride)
            }
            ArchLayer::Relu => relu_backward(acts.output_of(i), &grad),
        };
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &FloatTensor,
    weights: &FloatTensor,
    dout: &FloatTensor,
    grads: &mut LayerTensors,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> FloatTensor {
    let (ic, ih, iw) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (dout.shape[1], dout.shape[2]);
    let mut dx = vec![0.0f64; input.data.len()];
    for oc in 0..out_channels {
        let dout_plane = &dout.data[oc * oh * ow..(oc + 1) * oh * ow];
        grads.bias.data[oc] += dout_plane.iter().sum::<f64>();
        for c in 0..ic {
            let in_plane = &input.data[c * ih * iw..(c + 1) * ih * iw];
            let dx_plane = &mut dx[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let widx = ((oc * ic + c) * kernel + ky) * kernel + kx;
                    let w = weights.data[widx];
                    let mut dw = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * iw..(iy as usize + 1) * iw];
                        let dx_row = &mut dx_plane[iy as usize * iw..(iy as usize + 1) * iw];
                        let dout_row = &dout_plane[oy * ow..(oy + 1) * ow];
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < iw as isize {
                                let g = dout_row[ox];
                                dw += g * in_row[ix as usize];
                                dx_row[ix as usize] += g * w;
                            }
                        }
                    }
                    grads.weights.data[widx] += dw;
                }
            }
        }
    }
    FloatTensor { shape: input.shape.clone(), data: dx }
}

fn fc_backward(
    input: &FloatTensor,
    weights: &FloatTensor,
    dout: &FloatTensor,
    grads: &mut LayerTensors,
    in_features: usize,
    out_features: usize,
) -> FloatTensor {
    let x = &input.data;
    let mut dx = vec![0.0f64; in_features];
    for o in 0..out_features {
        let g = dout.data[o];
        grads.bias.data[o] += g;
        let row = &weights.data[o * in_features..(o + 1) * in_features];
        let grow = &mut grads.weights.data[o * in_features..(o + 1) * in_features];
        for j in 0..in_features {
            grow[j] += g * x[j];
            dx[j] += g * row[j];
        }
    }
    FloatTensor { shape: input.shape.clone(), data: dx }
}

fn max_pool_backward(
    input: &FloatTensor,
    dout: &FloatTensor,
    window: usize,
    stride: usize,
) -> FloatTensor {
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (dout.shape[1], dout.shape[2]);
    let mut dx = vec![0.0f64; input.data.len()];
    for ch in 0..c {
        let plane = &input.data[ch * h * w..(ch + 1) * h * w];
        let dx_plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..window {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = plane[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                dx_plane[best_idx] += dout.data[(ch * oh + oy) * ow + ox];
            }
        }
    }
    FloatTensor { shape: input.shape.clone(), data: dx }
}

fn relu_backward(output: &FloatTensor, dout: &FloatTensor) -> FloatTensor {
    let data = output
        .data
        .iter()
        .zip(&dout.data)
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    FloatTensor { shape: dout.shape.clone(), data }
}

/// Momentum SGD over the full-precision masters: `v <- m*v - lr*g`,
/// `w <- w + v`. Rejects non-finite gradients instead of diverging.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: MasterWeights,
}

impl Sgd {
    pub fn new(arch: &Architecture, learning_rate: f64, momentum: f64) -> Self {
        Self { learning_rate, momentum, velocity: MasterWeights::zeros_like(arch) }
    }

    pub fn step(&mut self, weights: &mut MasterWeights, grads: &Gradients) -> Result<(), TrainError> {
        if !grads.is_finite() {
            return Err(TrainError::NonFiniteGradient);
        }
        for (slot, (w, g)) in self
            .velocity
            .layers
            .iter_mut()
            .zip(weights.layers.iter_mut().zip(&grads.layers))
        {
            let (Some(v), Some(w), Some(g)) = (slot.as_mut(), w.as_mut(), g.as_ref()) else {
                continue;
            };
            for i in 0..v.weights.data.len() {
                v.weights.data[i] =
                    self.momentum * v.weights.data[i] - self.learning_rate * g.weights.data[i];
                w.weights.data[i] += v.weights.data[i];
            }
            for i in 0..v.bias.data.len() {
                v.bias.data[i] =
                    self.momentum * v.bias.data[i] - self.learning_rate * g.bias.data[i];
                w.bias.data[i] += v.bias.data[i];
            }
        }
        Ok(())
    }
}
