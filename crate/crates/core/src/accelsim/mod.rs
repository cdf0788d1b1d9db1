//! Bit-accurate simulator of a fixed-point CNN accelerator.
//!
//! The host drives the device through the same interface discipline a real
//! PCIe-attached accelerator would expose: launch/configure, transfer
//! weights and inputs into an explicit device-memory space, run the forward
//! pass bottom layer to top, and read results back. Intermediate outputs
//! are written back to device memory only when the write-back data path is
//! enabled; that switch changes what the host can observe, never what the
//! device computes.
//!
//! MAC kernels inject faults from the configured model; everything is
//! reproducible because fault randomness is keyed by
//! `(seed, epoch, sample, layer)` rather than execution order.

pub mod kernels;
pub mod layout;

use thiserror::Error;

use crate::faultmodel::{FaultModel, FlipSampler, RngStream, StreamId};
use crate::qformat::{QFormat, QTensor};
use kernels::{conv2d_q, fully_connected_q, max_pool_q, relu_q, ActivationView, ConvGeometry};

pub use layout::{data_layout_recover, data_layout_reorder};

/// Largest dot-product length that provably cannot overflow the 32-bit
/// accumulator together with a bias: L * 128^2 + BIAS_ABS_MAX < 2^31.
pub const MAX_DOT_LEN: usize = 130_000;

/// Bias magnitude cap in accumulator units (raw int8 product scale).
pub const BIAS_ABS_MAX: i32 = 1 << 24;

/// Default channel-vector width of the modeled accelerator datapath.
pub const DEFAULT_VECTOR_WIDTH: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transfer error: {0}")]
    Transfer(String),
    #[error("device memory region invalid: {0}")]
    InvalidRegion(String),
    #[error("data-path error: {0}")]
    DataPath(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("layer {layer} is {actual}, not {expected}")]
    WrongLayerKind { layer: usize, expected: &'static str, actual: &'static str },
}

/// One layer of the device pipeline. Conv and fully-connected layers carry
/// their fixed-point contract: weight format, output activation format, and
/// the accumulator right-shift that maps between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerDescriptor {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight_format: QFormat,
        activation_format: QFormat,
        requant_shift: u32,
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
        weight_format: QFormat,
        activation_format: QFormat,
        requant_shift: u32,
    },
    MaxPool { window: usize, stride: usize },
    Relu,
}

impl LayerDescriptor {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Conv2d { .. } => "conv2d",
            Self::FullyConnected { .. } => "fully_connected",
            Self::MaxPool { .. } => "max_pool",
            Self::Relu => "relu",
        }
    }

    /// Conv and fully-connected layers own weights; pool and relu do not.
    pub fn is_parametric(&self) -> bool {
        matches!(self, Self::Conv2d { .. } | Self::FullyConnected { .. })
    }

    /// Weight tensor shape, if the layer has one.
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

    pub fn weight_format(&self) -> Option<QFormat> {
        match *self {
            Self::Conv2d { weight_format, .. } | Self::FullyConnected { weight_format, .. } => {
                Some(weight_format)
            }
            _ => None,
        }
    }

    pub fn activation_format(&self) -> Option<QFormat> {
        match *self {
            Self::Conv2d { activation_format, .. }
            | Self::FullyConnected { activation_format, .. } => Some(activation_format),
            _ => None,
        }
    }
}

/// Complete device configuration: the layer pipeline, the input the device
/// expects, and the class count of the final logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkDescriptor {
    pub layers: Vec<LayerDescriptor>,
    /// (channels, height, width) of one input sample.
    pub input_shape: [usize; 3],
    pub input_format: QFormat,
    pub num_classes: usize,
}

/// Per-layer shape/format flow computed by validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    pub input_format: QFormat,
    pub output_format: QFormat,
    /// MAC steps per forward pass of this layer (0 for pool/relu).
    pub macs: u64,
}

impl NetworkDescriptor {
    /// Validate shape chaining, format consistency, and accumulator safety;
    /// return the per-layer plan.
    pub fn plan(&self) -> Result<Vec<LayerPlan>, DeviceError> {
        if self.layers.is_empty() {
            return Err(DeviceError::Config("network has no layers".into()));
        }
        let mut shape = self.input_shape;
        let mut format = self.input_format;
        if shape.iter().any(|&d| d == 0) {
            return Err(DeviceError::Config(format!("input shape {shape:?} has a zero dim")));
        }
        let mut plan = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out_shape, out_format, macs) = match *layer {
                LayerDescriptor::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight_format,
                    activation_format,
                    requant_shift,
                } => {
                    if in_channels != shape[0] {
                        return Err(DeviceError::Config(format!(
                            "layer {i}: conv expects {in_channels} channels, input has {}",
                            shape[0]
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(DeviceError::Config(format!(
                            "layer {i}: conv dimensions must be positive"
                        )));
                    }
                    let oh = conv_out_dim(shape[1], kernel, stride, padding)
                        .ok_or_else(|| non_integer_dim(i, "height"))?;
                    let ow = conv_out_dim(shape[2], kernel, stride, padding)
                        .ok_or_else(|| non_integer_dim(i, "width"))?;
                    check_formats(i, format, weight_format, activation_format, requant_shift)?;
                    check_dot_len(i, in_channels * kernel * kernel)?;
                    let macs = (out_channels * oh * ow * in_channels * kernel * kernel) as u64;
                    ([out_channels, oh, ow], activation_format, macs)
                }
                LayerDescriptor::FullyConnected {
                    in_features,
                    out_features,
                    weight_format,
                    activation_format,
                    requant_shift,
                } => {
                    let flat = shape[0] * shape[1] * shape[2];
                    if in_features != flat {
                        return Err(DeviceError::Config(format!(
                            "layer {i}: fc expects {in_features} features, input flattens to {flat}"
                        )));
                    }
                    if out_features == 0 {
                        return Err(DeviceError::Config(format!(
                            "layer {i}: fc output size must be positive"
                        )));
                    }
                    check_formats(i, format, weight_format, activation_format, requant_shift)?;
                    check_dot_len(i, in_features)?;
                    ([out_features, 1, 1], activation_format, (out_features * in_features) as u64)
                }
                LayerDescriptor::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 {
                        return Err(DeviceError::Config(format!(
                            "layer {i}: pool window/stride must be positive"
                        )));
                    }
                    let oh = pool_out_dim(shape[1], window, stride)
                        .ok_or_else(|| non_integer_dim(i, "height"))?;
                    let ow = pool_out_dim(shape[2], window, stride)
                        .ok_or_else(|| non_integer_dim(i, "width"))?;
                    ([shape[0], oh, ow], format, 0)
                }
                LayerDescriptor::Relu => (shape, format, 0),
            };
            plan.push(LayerPlan {
                input_shape: shape,
                output_shape: out_shape,
                input_format: format,
                output_format: out_format,
                macs,
            });
            shape = out_shape;
            format = out_format;
        }
        let final_len = shape[0] * shape[1] * shape[2];
        if final_len != self.num_classes {
            return Err(DeviceError::Config(format!(
                "final layer produces {final_len} values for {} classes",
                self.num_classes
            )));
        }
        Ok(plan)
    }

    /// Total MAC steps of one forward pass.
    pub fn macs_per_forward(&self) -> Result<u64, DeviceError> {
        Ok(self.plan()?.iter().map(|p| p.macs).sum())
    }

    pub fn parametric_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_parametric()).count()
    }
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || (padded - kernel) % stride != 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn pool_out_dim(input: usize, window: usize, stride: usize) -> Option<usize> {
    if input < window || (input - window) % stride != 0 {
        return None;
    }
    Some((input - window) / stride + 1)
}

fn non_integer_dim(layer: usize, axis: &str) -> DeviceError {
    DeviceError::Config(format!("layer {layer}: {axis} does not tile into an integer output size"))
}

fn check_formats(
    layer: usize,
    input: QFormat,
    weight: QFormat,
    activation: QFormat,
    requant_shift: u32,
) -> Result<(), DeviceError> {
    for (name, f) in [("input", input), ("weight", weight), ("activation", activation)] {
        if f.total_bits != 8 {
            return Err(DeviceError::Config(format!(
                "layer {layer}: {name} format {f} is not 8-bit"
            )));
        }
    }
    let expected = input.frac_bits as i64 + weight.frac_bits as i64 - activation.frac_bits as i64;
    if expected < 0 {
        return Err(DeviceError::Config(format!(
            "layer {layer}: output precision {activation} finer than the accumulator provides"
        )));
    }
    if requant_shift as i64 != expected {
        return Err(DeviceError::Config(format!(
            "layer {layer}: requant_shift {requant_shift} inconsistent with formats \
             (input {input}, weight {weight}, activation {activation} need {expected})"
        )));
    }
    Ok(())
}

fn check_dot_len(layer: usize, len: usize) -> Result<(), DeviceError> {
    if len > MAX_DOT_LEN {
        return Err(DeviceError::Config(format!(
            "layer {layer}: dot length {len} could overflow the 32-bit accumulator"
        )));
    }
    Ok(())
}

/// Weights of one parametric layer as the device consumes them: int8 weight
/// tensor plus a bias vector already scaled to accumulator units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerWeights {
    pub weights: QTensor,
    pub bias: Vec<i32>,
}

impl LayerWeights {
    pub fn transfer_bytes(&self) -> u64 {
        self.weights.transfer_bytes() + 4 * self.bias.len() as u64
    }
}

#[derive(Debug, Clone, Default)]
struct Region {
    data: Option<QTensor>,
}

impl Region {
    fn valid(&self) -> bool {
        self.data.is_some()
    }

    fn invalidate(&mut self) {
        self.data = None;
    }
}

/// Explicit device-memory space: a weight region per parametric layer, one
/// input region, and one output region per layer. A region may be read
/// only while valid; a fresh forward pass invalidates every output region
/// before writing.
#[derive(Debug, Clone)]
pub struct DeviceMemory {
    weights: Vec<Option<LayerWeights>>,
    input: Region,
    outputs: Vec<Region>,
}

impl DeviceMemory {
    fn sized_for(net: &NetworkDescriptor) -> Self {
        Self {
            weights: vec![None; net.layers.len()],
            input: Region::default(),
            outputs: vec![Region::default(); net.layers.len()],
        }
    }

    pub fn weight_region_count(&self) -> usize {
        self.weights.iter().flatten().count()
    }

    pub fn output_region_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn output_valid(&self, layer: usize) -> bool {
        self.outputs[layer].valid()
    }

    pub fn input_valid(&self) -> bool {
        self.input.valid()
    }

    fn invalidate_outputs(&mut self) {
        for r in &mut self.outputs {
            r.invalidate();
        }
    }
}

/// Accounting for the transfer/compute time report: the modeled device
/// moves data at PCIe-class bandwidth and retires a fixed number of MACs
/// per clock cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceTimeModel {
    pub freq_mhz: f64,
    pub macs_per_cycle: f64,
    pub bandwidth_bytes_per_sec: f64,
}

impl DeviceTimeModel {
    pub fn new(freq_mhz: f64) -> Self {
        Self {
            freq_mhz,
            macs_per_cycle: DEFAULT_VECTOR_WIDTH as f64,
            bandwidth_bytes_per_sec: 8e9,
        }
    }

    pub fn compute_ms(&self, macs: u64) -> f64 {
        macs as f64 / (self.freq_mhz * 1e3 * self.macs_per_cycle)
    }

    pub fn transfer_ms(&self, bytes: u64) -> f64 {
        bytes as f64 * 1e3 / self.bandwidth_bytes_per_sec
    }
}

/// Identifies one forward pass for fault-stream purposes. Streams are keyed
/// by `(device seed, epoch, sample, layer)`, so two passes with the same
/// identifiers replay identical faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardPass {
    pub epoch: u64,
    pub sample: u64,
}

impl ForwardPass {
    pub fn new(epoch: u64, sample: u64) -> Self {
        Self { epoch, sample }
    }
}

/// A configured, launched accelerator instance. Dropping the handle closes
/// the device; ownership makes use-after-close unrepresentable.
#[derive(Debug, Clone)]
pub struct DeviceHandle {
    network: NetworkDescriptor,
    plan: Vec<LayerPlan>,
    memory: DeviceMemory,
    write_back_enabled: bool,
    fault: FaultModel,
    sampler: FlipSampler,
    rng_seed: u64,
    bytes_to_device: u64,
    bytes_from_device: u64,
    macs_executed: u64,
}

/// Configure and launch the accelerator: validates the network, sizes the
/// device-memory regions (all initially invalid), and fixes the fault model
/// and seed for the handle's lifetime.
pub fn launch_accelerator(
    network: NetworkDescriptor,
    fault: FaultModel,
    write_back_enabled: bool,
    seed: u64,
) -> Result<DeviceHandle, DeviceError> {
    let plan = network.plan()?;
    let memory = DeviceMemory::sized_for(&network);
    let sampler = fault.sampler();
    Ok(DeviceHandle {
        network,
        plan,
        memory,
        write_back_enabled,
        fault,
        sampler,
        rng_seed: seed,
        bytes_to_device: 0,
        bytes_from_device: 0,
        macs_executed: 0,
    })
}

impl DeviceHandle {
    pub fn network(&self) -> &NetworkDescriptor {
        &self.network
    }

    pub fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    pub fn memory(&self) -> &DeviceMemory {
        &self.memory
    }

    pub fn write_back_enabled(&self) -> bool {
        self.write_back_enabled
    }

    pub fn fault(&self) -> &FaultModel {
        &self.fault
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    /// Bytes moved host->device so far.
    pub fn bytes_to_device(&self) -> u64 {
        self.bytes_to_device
    }

    /// Bytes moved device->host so far.
    pub fn bytes_from_device(&self) -> u64 {
        self.bytes_from_device
    }

    /// MAC steps executed so far.
    pub fn macs_executed(&self) -> u64 {
        self.macs_executed
    }

    /// Transfer weights for every parametric layer plus one input sample
    /// into device memory. Validation happens before anything is written:
    /// a failed transfer leaves every region untouched. A successful one
    /// invalidates all output regions (they would be stale).
    pub fn data_to_device(
        &mut self,
        weights: &[LayerWeights],
        input: &QTensor,
    ) -> Result<(), DeviceError> {
        let expected = self.network.parametric_layer_count();
        if weights.len() != expected {
            return Err(DeviceError::Transfer(format!(
                "expected weights for {expected} layers, got {}",
                weights.len()
            )));
        }
        let mut supplied = weights.iter();
        for (i, layer) in self.network.layers.iter().enumerate() {
            if !layer.is_parametric() {
                continue;
            }
            let lw = supplied.next().expect("length checked above");
            let want_shape = layer.weight_shape().expect("parametric");
            if lw.weights.shape != want_shape {
                return Err(DeviceError::Transfer(format!(
                    "layer {i}: weight shape {:?} does not match descriptor {:?}",
                    lw.weights.shape, want_shape
                )));
            }
            if Some(lw.weights.format) != layer.weight_format() {
                return Err(DeviceError::Transfer(format!(
                    "layer {i}: weight format {} does not match descriptor",
                    lw.weights.format
                )));
            }
            if lw.bias.len() != layer.bias_len().expect("parametric") {
                return Err(DeviceError::Transfer(format!(
                    "layer {i}: bias length {} does not match descriptor",
                    lw.bias.len()
                )));
            }
            if lw.bias.iter().any(|&b| b.abs() > BIAS_ABS_MAX) {
                return Err(DeviceError::Transfer(format!(
                    "layer {i}: bias exceeds accumulator budget"
                )));
            }
        }
        self.check_input(input)?;

        let mut supplied = weights.iter();
        for (i, layer) in self.network.layers.iter().enumerate() {
            if layer.is_parametric() {
                let lw = supplied.next().expect("validated");
                self.bytes_to_device += lw.transfer_bytes();
                self.memory.weights[i] = Some(lw.clone());
            }
        }
        self.set_input(input);
        Ok(())
    }

    /// Transfer a new input sample only; weights must already be resident.
    pub fn input_to_device(&mut self, input: &QTensor) -> Result<(), DeviceError> {
        if self.memory.weight_region_count() != self.network.parametric_layer_count() {
            return Err(DeviceError::Transfer("weights not resident".into()));
        }
        self.check_input(input)?;
        self.set_input(input);
        Ok(())
    }

    fn check_input(&self, input: &QTensor) -> Result<(), DeviceError> {
        let want: Vec<usize> = self.network.input_shape.to_vec();
        if input.shape != want {
            return Err(DeviceError::Transfer(format!(
                "input shape {:?} does not match device {:?}",
                input.shape, want
            )));
        }
        if input.format != self.network.input_format {
            return Err(DeviceError::Transfer(format!(
                "input format {} does not match device {}",
                input.format, self.network.input_format
            )));
        }
        Ok(())
    }

    fn set_input(&mut self, input: &QTensor) {
        self.bytes_to_device += input.transfer_bytes();
        self.memory.input.data = Some(input.clone());
        self.memory.invalidate_outputs();
    }

    /// Read every layer's output back to the host. Requires a completed
    /// forward pass with write-back enabled; with it disabled only the
    /// final logits exist (returned by [`DeviceHandle::device_forward`])
    /// and asking for intermediates is a data-path error.
    pub fn data_from_device(&mut self) -> Result<Vec<QTensor>, DeviceError> {
        if !self.write_back_enabled {
            return Err(DeviceError::DataPath(
                "intermediate outputs requested but the write-back path is disabled".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.memory.outputs.len());
        for (i, r) in self.memory.outputs.iter().enumerate() {
            let t = r.data.as_ref().ok_or_else(|| {
                DeviceError::InvalidRegion(format!("output region {i} has not been written"))
            })?;
            out.push(t.clone());
        }
        // The final logits were already accounted for when the forward pass
        // returned them; this transfer moves the intermediates.
        self.bytes_from_device +=
            out.iter().take(out.len() - 1).map(QTensor::transfer_bytes).sum::<u64>();
        Ok(out)
    }

    /// Run the whole pipeline bottom to top. Per-layer outputs are written
    /// to device memory only when write-back is enabled; the final logits
    /// always are, and are returned (that read-back is accounted as a
    /// device->host transfer).
    pub fn device_forward(&mut self, pass: ForwardPass) -> Result<QTensor, DeviceError> {
        if !self.memory.input_valid() {
            return Err(DeviceError::InvalidRegion("input region not written".into()));
        }
        if self.memory.weight_region_count() != self.network.parametric_layer_count() {
            return Err(DeviceError::InvalidRegion("weight regions not written".into()));
        }
        self.memory.invalidate_outputs();
        let mut activation = self.memory.input.data.clone().expect("checked valid");
        let last = self.network.layers.len() - 1;
        for i in 0..=last {
            activation = self.run_layer(i, &activation, pass)?;
            if self.write_back_enabled || i == last {
                self.memory.outputs[i].data = Some(activation.clone());
            }
        }
        self.bytes_from_device += activation.transfer_bytes();
        Ok(activation)
    }

    fn run_layer(
        &mut self,
        index: usize,
        input: &QTensor,
        pass: ForwardPass,
    ) -> Result<QTensor, DeviceError> {
        let mut rng = self.layer_stream(index, pass);
        let out = match &self.network.layers[index] {
            LayerDescriptor::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                activation_format,
                requant_shift,
                ..
            } => {
                let lw = self.memory.weights[index].as_ref().expect("weights resident");
                let plan = &self.plan[index];
                let geom = ConvGeometry {
                    out_channels: *out_channels,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    out_height: plan.output_shape[1],
                    out_width: plan.output_shape[2],
                };
                conv2d_q(
                    ActivationView::standard(input),
                    &lw.weights,
                    &lw.bias,
                    &geom,
                    *requant_shift,
                    *activation_format,
                    &self.sampler,
                    &mut rng,
                )
            }
            LayerDescriptor::FullyConnected {
                out_features,
                activation_format,
                requant_shift,
                ..
            } => {
                let lw = self.memory.weights[index].as_ref().expect("weights resident");
                fully_connected_q(
                    &input.data,
                    &lw.weights,
                    &lw.bias,
                    *out_features,
                    *requant_shift,
                    *activation_format,
                    &self.sampler,
                    &mut rng,
                )
            }
            LayerDescriptor::MaxPool { window, stride } => max_pool_q(input, *window, *stride),
            LayerDescriptor::Relu => relu_q(input),
        };
        self.macs_executed += self.plan[index].macs;
        Ok(out)
    }

    fn layer_stream(&self, layer: usize, pass: ForwardPass) -> RngStream {
        RngStream::new(self.rng_seed, StreamId::new(pass.epoch, pass.sample, layer as u32))
    }

    /// Run a single conv layer against device memory (layer 0 reads the
    /// input region, others the previous layer's output region, which
    /// requires write-back for a manual layer-by-layer walk).
    pub fn conv_forward_q(&mut self, layer: usize, pass: ForwardPass) -> Result<QTensor, DeviceError> {
        self.expect_kind(layer, "conv2d")?;
        self.single_layer(layer, pass)
    }

    /// Run a single fully-connected layer against device memory.
    pub fn fc_forward_q(&mut self, layer: usize, pass: ForwardPass) -> Result<QTensor, DeviceError> {
        self.expect_kind(layer, "fully_connected")?;
        self.single_layer(layer, pass)
    }

    /// Run a single max-pool layer against device memory.
    pub fn pool_forward_q(&mut self, layer: usize, pass: ForwardPass) -> Result<QTensor, DeviceError> {
        self.expect_kind(layer, "max_pool")?;
        self.single_layer(layer, pass)
    }

    /// Run a single relu layer against device memory.
    pub fn relu_q(&mut self, layer: usize, pass: ForwardPass) -> Result<QTensor, DeviceError> {
        self.expect_kind(layer, "relu")?;
        self.single_layer(layer, pass)
    }

    fn expect_kind(&self, layer: usize, expected: &'static str) -> Result<(), DeviceError> {
        let actual = self
            .network
            .layers
            .get(layer)
            .ok_or_else(|| DeviceError::Config(format!("layer {layer} out of range")))?
            .kind_name();
        if actual != expected {
            return Err(DeviceError::WrongLayerKind { layer, expected, actual });
        }
        Ok(())
    }

    fn single_layer(&mut self, layer: usize, pass: ForwardPass) -> Result<QTensor, DeviceError> {
        if self.network.layers[layer].is_parametric() && self.memory.weights[layer].is_none() {
            return Err(DeviceError::InvalidRegion(format!("layer {layer} weights not written")));
        }
        let input = if layer == 0 {
            self.memory.input.data.clone().ok_or_else(|| {
                DeviceError::InvalidRegion("input region not written".into())
            })?
        } else {
            self.memory.outputs[layer - 1].data.clone().ok_or_else(|| {
                DeviceError::InvalidRegion(format!("output region {} not written", layer - 1))
            })?
        };
        let out = self.run_layer(layer, &input, pass)?;
        if self.write_back_enabled || layer == self.network.layers.len() - 1 {
            self.memory.outputs[layer].data = Some(out.clone());
        }
        Ok(out)
    }
}
