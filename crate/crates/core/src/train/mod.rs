//! Training framework: off-line pre-training, then fine-tuning with the
//! fixed-point forward pass on the simulated device and the float backward
//! pass on the host.

pub mod arch;
mod float_net;
mod loop_;
mod runner;

pub use arch::{architecture_of, ArchLayer, Architecture};
pub use float_net::{
    backward, float_forward, loss_and_grad, Activations, Gradients, LayerTensors, MasterWeights,
    Sgd,
};
pub use loop_::{
    calibrate_network, finetune, pretrain, FinetuneOutcome, IterationRecord, PretrainOutcome,
    DEFAULT_CLOCK_MHZ,
};
pub use runner::{
    evaluate_topk, evaluate_topk_multi, quantize_input, quantize_masters, run_training_batch,
    stability_run, ForwardSource, SampleRun, StabilityReport, EVAL_EPOCH_BASE,
};

use thiserror::Error;

use crate::accelsim::{DeviceError, NetworkDescriptor};
use crate::qformat::QuantError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("gradient contains a non-finite value; update aborted")]
    NonFiniteGradient,
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("backward pass needs {expected} activations, got {actual}")]
    MissingActivations { expected: usize, actual: usize },
    #[error("fine-tuning requires a device with write-back enabled")]
    WriteBackRequired,
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

impl PartialEq for TrainError {
    fn eq(&self, other: &Self) -> bool {
        // structural comparison is enough for tests
        format!("{self}") == format!("{other}")
    }
}

/// Hyperparameters shared by pre-training and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Momentum coefficient in [0, 1).
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop target as a fraction of the clean quantized baseline
    /// accuracy, in [0, 1].
    pub accuracy_threshold: f64,
    /// Iterations between validation evaluations.
    pub eval_interval: usize,
    /// Evaluate on the first N validation samples (0 = all).
    pub eval_subset: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 2,
            accuracy_threshold: 0.99,
            eval_interval: 200,
            eval_subset: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.accuracy_threshold) {
            return Err(TrainError::Config(format!(
                "accuracy_threshold {} must lie in [0, 1]",
                self.accuracy_threshold
            )));
        }
        if self.eval_interval == 0 {
            return Err(TrainError::Config("eval_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Serialized training state: the calibrated device network, the
/// full-precision master weights, and ordered key-value metadata.
/// Quantizing the masters with the stored formats reproduces the deployed
/// tensors bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkDescriptor,
    pub masters: MasterWeights,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_metadata(&mut self, key: &str, value: impl Into<String>) {
        if let Some(slot) = self.metadata.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value.into();
        } else {
            self.metadata.push((key.to_string(), value.into()));
        }
    }
}

/// Small fixtures shared by unit tests across modules.
#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::data::DatasetSplit;
    use crate::faultmodel::RngStream;
    use crate::qformat::FloatTensor;

    /// A 3-layer toy architecture small enough for finite differences.
    pub fn tiny_arch() -> Architecture {
        Architecture {
            layers: vec![
                ArchLayer::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 0,
                },
                ArchLayer::Relu,
                ArchLayer::MaxPool { window: 2, stride: 2 },
                ArchLayer::FullyConnected { in_features: 2 * 3 * 3, out_features: 4 },
            ],
            input_shape: [1, 8, 8],
            num_classes: 4,
        }
    }

    /// Deterministic synthetic dataset: each class is a blob at a
    /// class-specific location plus noise, so even the tiny net can learn.
    pub fn synthetic_split(n: usize, seed: u64) -> DatasetSplit {
        let arch = tiny_arch();
        let [c, h, w] = arch.input_shape;
        let classes = arch.num_classes;
        let mut rng = RngStream::from_seed(seed);
        let mut data = Vec::with_capacity(n * c * h * w);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes;
            labels.push(label as u32);
            let (cy, cx) = ((label / 2) * 4 + 2, (label % 2) * 4 + 2);
            for _ in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
                        let signal = (-d2 / 3.0).exp();
                        let noise = 0.08 * rng.next_f64();
                        data.push((signal + noise).min(1.0));
                    }
                }
            }
        }
        let images = FloatTensor { shape: vec![n, c, h, w], data };
        DatasetSplit::new(images, labels, classes).unwrap()
    }

    /// A trained-enough checkpoint on the synthetic data.
    pub fn calibrated_tiny_checkpoint(seed: u64) -> Checkpoint {
        let arch = tiny_arch();
        let train = synthetic_split(256, seed);
        let config = TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 6,
            eval_interval: 1000,
            eval_subset: 64,
            seed,
            ..TrainConfig::default()
        };
        let out = pretrain(&arch, &train, &train, &config).unwrap();
        out.checkpoint
    }
}
