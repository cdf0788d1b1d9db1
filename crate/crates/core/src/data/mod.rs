//! Dataset ingestion, checkpoint persistence, and results output.

mod checkpoint_io;
mod cifar;
mod csv_out;
mod idx;

pub use checkpoint_io::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cifar::load_cifar10;
pub use csv_out::{format_float, write_results_csv, CsvValue};
pub use idx::load_idx;

use thiserror::Error;

use crate::qformat::FloatTensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {what}")]
    Parse { path: String, what: String },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error(transparent)]
    Invalid(#[from] crate::qformat::QuantError),
}

impl DataError {
    pub(crate) fn parse(path: &std::path::Path, what: impl Into<String>) -> Self {
        Self::Parse { path: path.display().to_string(), what: what.into() }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

/// One split of a labeled image dataset, pixels normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    /// (N, C, H, W), values in [0, 1].
    pub images: FloatTensor,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl DatasetSplit {
    pub fn new(images: FloatTensor, labels: Vec<u32>, num_classes: usize) -> Result<Self, DataError> {
        if images.shape.len() != 4 {
            return Err(DataError::Format(format!(
                "expected (N, C, H, W) images, got shape {:?}",
                images.shape
            )));
        }
        if images.shape[0] != labels.len() {
            return Err(DataError::Format(format!(
                "{} images but {} labels",
                images.shape[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(DataError::Format(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (C, H, W) shape of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        [self.images.shape[1], self.images.shape[2], self.images.shape[3]]
    }

    /// Pixels of sample `i`.
    pub fn image(&self, i: usize) -> &[f64] {
        let stride: usize = self.sample_shape().iter().product();
        &self.images.data[i * stride..(i + 1) * stride]
    }

    /// A copy of the first `n` samples (the whole split when `n` is 0 or
    /// exceeds it). Useful for fixed evaluation subsets.
    pub fn prefix(&self, n: usize) -> DatasetSplit {
        let n = if n == 0 { self.len() } else { n.min(self.len()) };
        let stride: usize = self.sample_shape().iter().product();
        let mut shape = self.images.shape.clone();
        shape[0] = n;
        DatasetSplit {
            images: FloatTensor { shape, data: self.images.data[..n * stride].to_vec() },
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }
}
