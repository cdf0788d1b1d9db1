//! Desk-scale simulator and training loop for fixed-point CNN accelerators
//! with unstable behavior (soft-error bit flips, overclocking timing
//! errors). The forward pass runs bit-accurately on a simulated device with
//! fault injection; the backward pass stays in floating point on the host,
//! so fine-tuning teaches the model to tolerate the device's faults.

pub mod accelsim;
pub mod data;
pub mod faultmodel;
pub mod qformat;
pub mod train;

pub use accelsim::{
    data_layout_recover, data_layout_reorder, launch_accelerator, DeviceError, DeviceHandle,
    DeviceTimeModel, ForwardPass, LayerDescriptor, LayerWeights, NetworkDescriptor,
};
pub use faultmodel::{
    apply_flip, overclock_error_rate, overclock_to_bitflip, sample_flip, BitFlipModel, FaultError,
    FaultModel, FlipSampler, OverclockModel, RngStream, StreamId,
};
pub use data::{
    load_checkpoint, load_cifar10, load_idx, save_checkpoint, write_results_csv, CsvValue,
    DataError, DatasetSplit,
};
pub use qformat::{
    calibrate_format, dequantize, quantize, FloatTensor, QFormat, QTensor, QuantError,
};
pub use train::{
    architecture_of, calibrate_network, evaluate_topk, finetune, pretrain, quantize_masters,
    stability_run, ArchLayer, Architecture, Checkpoint, FinetuneOutcome, ForwardSource,
    IterationRecord, MasterWeights, PretrainOutcome, StabilityReport, TrainConfig, TrainError,
};
